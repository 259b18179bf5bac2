//! Minibatch training with AdamW.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::eval::{check_compatible, evaluate};
use crate::harness::metrics::{metrics_text, MetricsRecord};
use crate::harness::optim::{clip_global_norm, learning_rate, AdamW};
use crate::model::{checkpoint, Ablation, Model};
use crate::numerics::{Rng, Tensor};
use crate::par::Exec;

pub struct TrainOutcome {
    pub model: Model,
    /// One record per evaluation, the last one after the final step.
    pub records: Vec<MetricsRecord>,
    pub seconds: f64,
}

impl TrainOutcome {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("training always records a final evaluation")
    }
}

/// Mean loss and mean gradient over `batch`. Per-sequence work may run in
/// parallel; the reduction is always in batch order.
pub fn batch_loss_and_grads(
    model: &Model,
    sequences: &[Vec<usize>],
    batch: &[usize],
    exec: Exec,
) -> Result<(f64, Vec<Tensor>)> {
    let results = exec.try_map(batch, |&i| model.loss_and_grads(&sequences[i]))?;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += b);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, grads))
}

/// Batch indices for 0-based `step`; a pure function of (seed, step).
pub fn sample_batch(seed: u64, step: usize, batch_size: usize, n: usize) -> Vec<usize> {
    let mut rng = Rng::stream(seed, step as u64);
    (0..batch_size).map(|_| rng.below(n)).collect()
}

pub fn train(cfg: &RunConfig, train_set: &Dataset, val_set: &Dataset, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = Model::new(cfg.model.clone())?;
    check_compatible(&model, train_set)?;
    check_compatible(&model, val_set)?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let oc = &cfg.optimizer;
    let mut opt = {
        let params: Vec<&Tensor> = model.params.named_tensors().into_iter().map(|(_, t)| t).collect();
        AdamW::new(oc, &params)
    };
    let label = model.config.variant.to_string();
    let mut records = Vec::new();
    let (mut window_loss, mut window_steps) = (0.0, 0usize);
    for step in 0..oc.steps {
        let batch = sample_batch(oc.seed, step, oc.batch_size, train_set.len());
        let (loss, mut grads) = match batch_loss_and_grads(&model, &train_set.sequences, &batch, exec) {
            Err(Error::NonFinite { .. }) => return Err(Error::NanLoss { step: step + 1 }),
            other => other?,
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NanLoss { step: step + 1 });
        }
        window_loss += loss;
        window_steps += 1;
        clip_global_norm(&mut grads, oc.grad_clip);
        opt.step(model.params.tensors_mut(), &grads, learning_rate(oc, step));

        let done = step + 1;
        if done % oc.eval_every == 0 || done == oc.steps {
            let mut rec = evaluate(&model, val_set, &cfg.eval, Ablation::none(), exec)?;
            rec.label = label.clone();
            rec.step = done;
            rec.train_loss = Some(window_loss / window_steps as f64);
            rec.seconds = start.elapsed().as_secs_f64();
            records.push(rec);
            (window_loss, window_steps) = (0.0, 0);
        }
    }
    Ok(TrainOutcome {
        model,
        records,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn check_output_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Config(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

/// Reads the datasets named in `cfg.data`, trains, and writes the metrics
/// file and checkpoint named in `cfg.output`.
pub fn run_training(cfg: &RunConfig, exec: Exec) -> Result<TrainOutcome> {
    let train_path = cfg
        .data
        .train
        .as_deref()
        .ok_or_else(|| Error::Config("data.train is not set".into()))?;
    let val_path = cfg
        .data
        .val
        .as_deref()
        .ok_or_else(|| Error::Config("data.val is not set".into()))?;
    check_output_dir(&cfg.output.metrics)?;
    check_output_dir(&cfg.output.checkpoint)?;
    let train_set = Dataset::read(train_path)?;
    let val_set = Dataset::read(val_path)?;
    let outcome = train(cfg, &train_set, &val_set, exec)?;
    fs::write(&cfg.output.metrics, metrics_text(&outcome.records)).map_err(|e| Error::io(&cfg.output.metrics, e))?;
    checkpoint::save(&outcome.model, &cfg.output.checkpoint)?;
    Ok(outcome)
}
