//! Perturbation audits of causality and of the chunk-level delays.
//!
//! Each trial draws fresh random inputs (and, for the full stack, fresh
//! randomized parameters), changes the input at one position `p`, and
//! measures how much protected output rows moved. Everything in a trial is
//! derived from its seed, `seed + trial`, so a failing trial can be rerun on
//! its own.

use std::fmt;

use crate::energy::{energy_encode, ChunkLayout, EnergyParams};
use crate::error::{Error, Result};
use crate::harness::config::AuditConfig;
use crate::model::{Model, ModelConfig};
use crate::numerics::{Rng, Tensor};
use crate::par::Exec;
use crate::periodicity::{periodicity_encode, PeriodicityParams};

/// Largest admissible change of a protected output.
pub const AUDIT_TOLERANCE: f64 = 1e-10;

/// Scale of the noise added to initialized parameters before auditing.
const PARAM_NOISE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditKind {
    /// Logit rows before the perturbed token, full model.
    FullStack,
    /// Energy encoder alone: rows other than `p` in chunks up to
    /// `chunk(p) + 1`.
    EnergyDelay,
    /// Periodicity encoder alone: rows other than `p` in chunks up to
    /// `chunk(p)`.
    PeriodicityDelay,
}

impl AuditKind {
    pub fn name(self) -> &'static str {
        match self {
            AuditKind::FullStack => "full_stack",
            AuditKind::EnergyDelay => "energy_delay",
            AuditKind::PeriodicityDelay => "periodicity_delay",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub position: usize,
    /// Max abs change over protected rows.
    pub deviation: f64,
    /// Max abs change over the rows the perturbation may reach.
    pub reach: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub kind: AuditKind,
    pub trials: usize,
    pub passes: usize,
    pub max_deviation: f64,
    /// Max over trials of the change in reachable rows; nonzero shows the
    /// perturbation actually propagates.
    pub max_reach: f64,
    pub failures: Vec<TrialResult>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn from_trials(kind: AuditKind, results: Vec<TrialResult>) -> Self {
        let failures: Vec<TrialResult> = results
            .iter()
            .filter(|r| !(r.deviation <= AUDIT_TOLERANCE))
            .copied()
            .collect();
        AuditReport {
            kind,
            trials: results.len(),
            passes: results.len() - failures.len(),
            max_deviation: results.iter().map(|r| r.deviation).fold(0.0, f64::max),
            max_reach: results.iter().map(|r| r.reach).fold(0.0, f64::max),
            failures,
        }
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}/{} passed, max_deviation={:e}, max_reach={:e}",
            self.kind.name(),
            self.passes,
            self.trials,
            self.max_deviation,
            self.max_reach
        )?;
        for r in &self.failures {
            write!(
                f,
                "\n  FAIL trial={} seed={} position={} deviation={:e}",
                r.trial, r.seed, r.position, r.deviation
            )?;
        }
        Ok(())
    }
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

/// Max abs difference of rows selected by `protected`, and of the rest.
fn split_deviation(a: &Tensor, b: &Tensor, protected: impl Fn(usize) -> bool) -> (f64, f64) {
    let (mut dev, mut reach) = (0.0f64, 0.0f64);
    for r in 0..a.rows() {
        let d = a
            .row(r)
            .iter()
            .zip(b.row(r))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if protected(r) {
            dev = dev.max(if d.is_nan() { f64::INFINITY } else { d });
        } else {
            reach = reach.max(d);
        }
    }
    (dev, reach)
}

fn other_token(rng: &mut Rng, old: usize, vocab: usize) -> usize {
    (old + 1 + rng.below(vocab - 1)) % vocab
}

/// A model with initialized-then-perturbed parameters, so every path
/// contributes.
pub fn randomized_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    let mut cfg = cfg.clone();
    cfg.init_seed = seed;
    let mut model = Model::new(cfg)?;
    model.params.perturb(&mut Rng::stream(seed, 1), PARAM_NOISE);
    Ok(model)
}

pub fn full_stack_trial(cfg: &ModelConfig, seq_len: usize, seed: u64, trial: usize) -> Result<TrialResult> {
    let s = trial_seed(seed, trial);
    let model = randomized_model(cfg, s)?;
    let mut rng = Rng::new(s);
    let vocab = cfg.vocab_size;
    let tokens: Vec<usize> = (0..seq_len).map(|_| rng.below(vocab)).collect();
    let p = rng.below(seq_len);
    let mut changed = tokens.clone();
    changed[p] = other_token(&mut rng, tokens[p], vocab);
    let a = model.forward(&tokens)?;
    let b = model.forward(&changed)?;
    let (deviation, reach) = split_deviation(&a, &b, |r| r < p);
    Ok(TrialResult {
        trial,
        seed: s,
        position: p,
        deviation,
        reach,
    })
}

fn perturbed_rows(rng: &mut Rng, n: usize, d: usize) -> (Tensor, Tensor, usize) {
    let h = Tensor::randn(rng, &[n, d], 1.0);
    let p = rng.below(n);
    let mut h2 = h.clone();
    for v in h2.row_mut(p) {
        *v = rng.normal();
    }
    (h, h2, p)
}

pub fn energy_delay_trial(d: usize, chunk_size: usize, seq_len: usize, seed: u64, trial: usize) -> Result<TrialResult> {
    let s = trial_seed(seed, trial);
    let mut rng = Rng::new(s);
    let params = EnergyParams::with_intensity(rng.uniform_range(0.5, 2.0));
    let (h, h2, p) = perturbed_rows(&mut rng, seq_len, d);
    let layout = ChunkLayout::new(seq_len, chunk_size)?;
    let a = energy_encode(&h, &params, chunk_size)?;
    let b = energy_encode(&h2, &params, chunk_size)?;
    let limit = layout.chunk_of(p) + 1;
    let (deviation, reach) = split_deviation(&a, &b, |r| r != p && layout.chunk_of(r) <= limit);
    Ok(TrialResult {
        trial,
        seed: s,
        position: p,
        deviation,
        reach,
    })
}

pub fn periodicity_delay_trial(
    d: usize,
    hidden: usize,
    chunk_size: usize,
    seq_len: usize,
    seed: u64,
    trial: usize,
) -> Result<TrialResult> {
    let s = trial_seed(seed, trial);
    let mut rng = Rng::new(s);
    let mut params = PeriodicityParams::init(&mut rng, d, hidden);
    params.visit_mut(&mut |t| {
        for v in t.data_mut() {
            *v += PARAM_NOISE * rng.normal();
        }
    });
    let (h, h2, p) = perturbed_rows(&mut rng, seq_len, d);
    let layout = ChunkLayout::new(seq_len, chunk_size)?;
    let a = periodicity_encode(&h, &params, chunk_size)?;
    let b = periodicity_encode(&h2, &params, chunk_size)?;
    let limit = layout.chunk_of(p);
    let (deviation, reach) = split_deviation(&a, &b, |r| r != p && layout.chunk_of(r) <= limit);
    Ok(TrialResult {
        trial,
        seed: s,
        position: p,
        deviation,
        reach,
    })
}

fn check(cfg: &ModelConfig, audit: &AuditConfig) -> Result<()> {
    if audit.trials == 0 {
        return Err(Error::Config("audit needs at least one trial".into()));
    }
    if audit.seq_len == 0 || audit.seq_len > cfg.n_max {
        return Err(Error::Config(format!(
            "audit seq_len must be in 1..={}, got {}",
            cfg.n_max, audit.seq_len
        )));
    }
    if cfg.vocab_size < 2 {
        return Err(Error::Config("audit needs a vocabulary of at least two tokens".into()));
    }
    Ok(())
}

pub fn audit(kind: AuditKind, cfg: &ModelConfig, audit: &AuditConfig, exec: Exec) -> Result<AuditReport> {
    check(cfg, audit)?;
    let (n, seed) = (audit.seq_len, audit.seed);
    let results = exec.try_map_range(audit.trials, |i| match kind {
        AuditKind::FullStack => full_stack_trial(cfg, n, seed, i),
        AuditKind::EnergyDelay => energy_delay_trial(cfg.d, cfg.chunk_size, n, seed, i),
        AuditKind::PeriodicityDelay => periodicity_delay_trial(cfg.d, cfg.mlp_hidden, cfg.chunk_size, n, seed, i),
    })?;
    Ok(AuditReport::from_trials(kind, results))
}

/// Full-stack audit followed by both delay audits.
pub fn audit_causality(cfg: &ModelConfig, audit_cfg: &AuditConfig, exec: Exec) -> Result<Vec<AuditReport>> {
    [
        AuditKind::FullStack,
        AuditKind::EnergyDelay,
        AuditKind::PeriodicityDelay,
    ]
    .into_iter()
    .map(|k| audit(k, cfg, audit_cfg, exec))
    .collect()
}
