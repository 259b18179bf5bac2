//! Sequential vs rayon execution of the batch-shaped workloads.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mppa::datagen::{generate_dataset, DatagenConfig};
use mppa::harness::train::{batch_loss_and_grads, sample_batch};
use mppa::harness::{audit, evaluate, AuditConfig, AuditKind, EvalConfig};
use mppa::model::{Ablation, Model, ModelConfig};
use mppa::par::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn datagen(c: &mut Criterion) {
    let cfg = DatagenConfig {
        count: 64,
        ..DatagenConfig::default()
    };
    let mut g = c.benchmark_group("datagen_64");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| generate_dataset(&cfg, 88, exec).unwrap()));
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let data = generate_dataset(&DatagenConfig::default(), 88, Exec::Sequential).unwrap();
    let model = Model::new(ModelConfig::desk()).unwrap();
    let mut g = c.benchmark_group("loss_and_grads");
    g.sample_size(10);
    for batch_size in [4, 16] {
        let batch = sample_batch(42, 0, batch_size, data.len());
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, batch_size), &batch, |b, batch| {
                b.iter(|| batch_loss_and_grads(&model, &data.sequences, batch, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn eval(c: &mut Criterion) {
    let cfg = DatagenConfig {
        count: 16,
        ..DatagenConfig::default()
    };
    let data = generate_dataset(&cfg, 42, Exec::Sequential).unwrap();
    let model = Model::new(ModelConfig::desk()).unwrap();
    let eval_cfg = EvalConfig {
        max_sequences: 0,
        decode_samples: 0,
    };
    let mut g = c.benchmark_group("evaluate_16");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| evaluate(&model, &data, &eval_cfg, Ablation::none(), exec).unwrap())
        });
    }
    g.finish();
}

fn audits(c: &mut Criterion) {
    let model = ModelConfig::desk();
    let cfg = AuditConfig {
        trials: 8,
        seq_len: 32,
        seed: 42,
    };
    let mut g = c.benchmark_group("audit_8_trials");
    g.sample_size(10);
    for kind in [AuditKind::FullStack, AuditKind::EnergyDelay] {
        for (name, exec) in MODES {
            g.bench_function(BenchmarkId::new(name, kind.name()), |b| {
                b.iter(|| audit(kind, &model, &cfg, exec).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, datagen, train_step, eval, audits);
criterion_main!(benches);
