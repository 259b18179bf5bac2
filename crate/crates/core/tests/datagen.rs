use std::collections::HashSet;
use std::fs;

use mppa::datagen::{
    detokenize_values, energy_conservation_error, generate_dataset, group_states, manifest_path, simulate, tokenize,
    DatagenConfig, Dataset, System, SystemKind, SystemSpec, TokenizerSpec,
};
use mppa::numerics::Rng;
use mppa::par::Exec;

fn harmonic_period_spec() -> SystemSpec {
    SystemSpec {
        system: System::Harmonic {
            omega: 2.0 * std::f64::consts::PI,
        },
        initial: vec![1.0, 0.0],
        dt: 1e-3,
        steps: 1000,
    }
}

#[test]
fn harmonic_energy_is_conserved() {
    let spec = harmonic_period_spec();
    let traj = simulate(&spec).unwrap();
    let last = traj.states.last().unwrap();
    assert!((last[0] - 1.0).abs() < 1e-6 && last[1].abs() < 1e-6);
    assert!(energy_conservation_error(&traj, &spec.system).unwrap() < 1e-6);
}

#[test]
fn damped_energy_decays_monotonically() {
    let system = System::Damped { omega: 2.0, gamma: 0.1 };
    let traj = simulate(&SystemSpec {
        system,
        initial: vec![1.0, 0.0],
        dt: 1e-3,
        steps: 20_000,
    })
    .unwrap();
    assert!(energy_conservation_error(&traj, &system).unwrap() > 0.0);
    let e: Vec<f64> = traj.states.iter().map(|s| system.energy(s).unwrap()).collect();
    assert!(e.windows(2).all(|w| w[1] <= w[0]));

    // Successive peaks of |x| shrink.
    let x: Vec<f64> = traj.states.iter().map(|s| s[0].abs()).collect();
    let peaks: Vec<f64> = (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .map(|i| x[i])
        .collect();
    assert!(peaks.len() >= 10);
    assert!(peaks.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn van_der_pol_settles_on_limit_cycle() {
    let traj = simulate(&SystemSpec {
        system: System::VanDerPol { mu: 1.0 },
        initial: vec![0.1, 0.0],
        dt: 1e-2,
        steps: 20_000,
    })
    .unwrap();
    assert!(traj.states.iter().all(|s| s[0].abs() < 3.0 && s[1].abs() < 4.0));
    let tail = &traj.states[15_000..];
    let max = tail.iter().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
    // Peak amplitude of the mu = 1 limit cycle is about 2.
    assert!(((max - min) / 2.0 - 2.0).abs() < 0.2, "amplitude {}", (max - min) / 2.0);
}

#[test]
fn lorenz_stays_on_attractor() {
    let traj = simulate(&SystemSpec {
        system: System::Lorenz {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        },
        initial: vec![1.0, 1.0, 20.0],
        dt: 1e-2,
        steps: 5_000,
    })
    .unwrap();
    assert!(traj.states.iter().all(|s| s.iter().all(|v| v.abs() < 60.0)));
    assert!(energy_conservation_error(
        &traj,
        &System::Lorenz {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0
        }
    )
    .is_err());
}

#[test]
fn tokenization_round_trip_within_one_bin() {
    let tok = TokenizerSpec {
        seq_len: 101,
        ..TokenizerSpec::default()
    };
    let mut rng = Rng::new(2);
    for _ in 0..20 {
        let spec = SystemSpec {
            system: System::Damped {
                omega: rng.uniform_range(0.5, 2.0),
                gamma: 0.2,
            },
            initial: vec![rng.uniform_range(-1.5, 1.5), rng.uniform_range(-1.5, 1.5)],
            dt: 0.05,
            steps: 60,
        };
        let traj = simulate(&spec).unwrap();
        let tokens = tokenize(&traj, &tok);
        assert_eq!(tokens.len(), 101);
        assert_eq!(tokens[0], tok.bos());
        let states = group_states(&detokenize_values(&tokens, &tok), 2);
        assert_eq!(states.len(), 50);
        for (a, b) in states.iter().zip(&traj.states) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - tok.clip(*y)).abs() <= tok.bin_width(), "{x} vs {y}");
            }
        }
    }
}

fn small_cfg(count: usize) -> DatagenConfig {
    DatagenConfig {
        count,
        tokenizer: TokenizerSpec {
            seq_len: 64,
            ..TokenizerSpec::default()
        },
        ..DatagenConfig::default()
    }
}

#[test]
fn generation_is_byte_identical_across_runs_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(100);
    let a = dir.path().join("a.tok");
    let b = dir.path().join("b.tok");
    generate_dataset(&cfg, 42, Exec::Parallel).unwrap().write(&a).unwrap();
    generate_dataset(&cfg, 42, Exec::Sequential).unwrap().write(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(manifest_path(&a)).unwrap(),
        fs::read(manifest_path(&b)).unwrap()
    );
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/data.tok");
    let mut cfg = small_cfg(30);
    cfg.kinds = SystemKind::ALL.iter().map(|k| k.name().to_string()).collect();
    let ds = generate_dataset(&cfg, 5, Exec::default()).unwrap();
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back.sequences, ds.sequences);
    assert_eq!(back.meta, ds.meta);
    assert_eq!(back.tokenizer, ds.tokenizer);
    assert_eq!(back.seed, 5);

    fs::write(&path, "1 2 x\n").unwrap();
    assert!(Dataset::read(&path).is_err());
    assert!(Dataset::read(&dir.path().join("nope.tok")).is_err());
}

#[test]
fn train_and_val_seeds_do_not_collide() {
    let cfg = small_cfg(100);
    let train = generate_dataset(&cfg, 88, Exec::default()).unwrap();
    let val = generate_dataset(&cfg, 42, Exec::default()).unwrap();
    let seen: HashSet<&Vec<usize>> = train.sequences.iter().collect();
    assert_eq!(val.sequences.iter().filter(|s| seen.contains(s)).count(), 0);
}

#[test]
fn tally_partitions_count_and_tokens_are_in_vocab() {
    let mut cfg = small_cfg(64);
    cfg.kinds = vec!["harmonic".into(), "van_der_pol".into(), "lorenz".into()];
    let ds = generate_dataset(&cfg, 1, Exec::default()).unwrap();
    assert_eq!(ds.tally().values().sum::<usize>(), 64);
    assert!(!ds.tally().contains_key(&SystemKind::Damped));
    let vocab = cfg.tokenizer.vocab_size();
    assert!(ds.sequences.iter().flatten().all(|&t| t < vocab));
    assert!(ds.sequences.iter().all(|s| s.len() == 64));
}
