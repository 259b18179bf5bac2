//! Perplexity evaluation, decoded-trajectory scoring and the ablation sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::datagen::{
    energy_conservation_error, group_states, Dataset, SequenceMeta, SystemKind, TokenizerSpec, Trajectory,
};
use crate::error::{Error, Result};
use crate::harness::config::EvalConfig;
use crate::harness::metrics::{KindScore, MetricsRecord};
use crate::model::{checkpoint, perplexity, Ablation, Component, Model, ModelConfig, Variant};
use crate::par::Exec;

/// Errors unless `dataset` can be fed to `model` as-is.
pub fn check_compatible(model: &Model, dataset: &Dataset) -> Result<()> {
    let mut diffs = Vec::new();
    let vocab = dataset.tokenizer.vocab_size();
    if vocab != model.config.vocab_size {
        diffs.push(format!(
            "vocab_size: model {} != data {}",
            model.config.vocab_size, vocab
        ));
    }
    if dataset.tokenizer.seq_len > model.config.n_max + 1 {
        diffs.push(format!(
            "n_max: model {} < data seq_len - 1 = {}",
            model.config.n_max,
            dataset.tokenizer.seq_len - 1
        ));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(diffs))
    }
}

fn token_value(tok: &TokenizerSpec, t: usize) -> f64 {
    if tok.is_value(t) {
        tok.dequantize(t)
    } else {
        0.0
    }
}

/// Greedily extends `prefix` to `len` tokens.
pub fn greedy_complete(model: &Model, prefix: &[usize], len: usize) -> Result<Vec<usize>> {
    let mut out = prefix.to_vec();
    while out.len() < len {
        let next = model.greedy_next(&out)?;
        out.push(next);
    }
    Ok(out)
}

struct DecodeScore {
    mse: f64,
    energy_error: Option<f64>,
}

/// Completes the second half of `sequence` from its first half and compares
/// the decoded values with the reference, in physical units.
fn decode_score(model: &Model, tok: &TokenizerSpec, sequence: &[usize], meta: &SequenceMeta) -> Result<DecodeScore> {
    let n = sequence.len();
    let half = n / 2;
    let generated = greedy_complete(model, &sequence[..half], n)?;
    let mut sq = 0.0;
    for t in half..n {
        let d = (token_value(tok, generated[t]) - token_value(tok, sequence[t])) / meta.scale;
        sq += d * d;
    }
    let mse = sq / (n - half) as f64;

    let energy_error = match meta.kind() {
        SystemKind::Lorenz => None,
        kind => {
            let dim = kind.dim();
            // Value index of generated[half] is half - 1 (BOS is not a value).
            let first_value = half - 1;
            let start = first_value.div_ceil(dim) * dim;
            let values: Vec<f64> = generated[1..]
                .iter()
                .map(|&t| token_value(tok, t) / meta.scale)
                .collect();
            let states = group_states(&values[start.min(values.len())..], dim);
            if states.is_empty() {
                None
            } else {
                let times = (0..states.len()).map(|i| i as f64).collect();
                let traj = Trajectory::new(times, states)?;
                Some(energy_conservation_error(&traj, &meta.system)?)
            }
        }
    };
    Ok(DecodeScore { mse, energy_error })
}

/// Token-weighted overall and per-kind perplexity, plus decoded-trajectory
/// scores over the first `cfg.decode_samples` sequences.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    cfg: &EvalConfig,
    ablation: Ablation,
    exec: Exec,
) -> Result<MetricsRecord> {
    check_compatible(model, dataset)?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let start = Instant::now();
    let count = match cfg.max_sequences {
        0 => dataset.len(),
        m => m.min(dataset.len()),
    };
    let idx: Vec<usize> = (0..count).collect();
    let losses = exec.try_map(&idx, |&i| model.token_losses(&dataset.sequences[i], ablation))?;

    let mut total = (0.0, 0usize);
    let mut by_kind: BTreeMap<SystemKind, (f64, usize)> = BTreeMap::new();
    for (i, seq_losses) in losses.iter().enumerate() {
        let s: f64 = seq_losses.iter().sum();
        total.0 += s;
        total.1 += seq_losses.len();
        let e = by_kind.entry(dataset.meta[i].kind()).or_insert((0.0, 0));
        e.0 += s;
        e.1 += seq_losses.len();
    }
    let val_loss = total.0 / total.1 as f64;
    let per_kind = by_kind
        .into_iter()
        .map(|(kind, (s, c))| {
            let loss = s / c as f64;
            KindScore {
                kind: kind.name().to_string(),
                loss,
                perplexity: perplexity(loss),
                tokens: c,
            }
        })
        .collect();

    let decode_idx: Vec<usize> = (0..cfg.decode_samples.min(count)).collect();
    let scored = if ablation == Ablation::none() {
        exec.try_map(&decode_idx, |&i| {
            decode_score(model, &dataset.tokenizer, &dataset.sequences[i], &dataset.meta[i])
        })?
    } else {
        Vec::new()
    };
    let trajectory_mse = (!scored.is_empty()).then(|| scored.iter().map(|s| s.mse).sum::<f64>() / scored.len() as f64);
    let energies: Vec<f64> = scored.iter().filter_map(|s| s.energy_error).collect();
    let energy_error = (!energies.is_empty()).then(|| energies.iter().sum::<f64>() / energies.len() as f64);

    let mut disabled: Vec<Component> = Component::ALL
        .into_iter()
        .filter(|&c| !model.config.is_enabled(c) || ablation.zeroes(c))
        .collect();
    disabled.dedup();
    Ok(MetricsRecord {
        label: "eval".into(),
        step: 0,
        train_loss: None,
        val_loss,
        val_perplexity: perplexity(val_loss),
        per_kind,
        trajectory_mse,
        energy_error,
        disabled,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Loads a checkpoint, optionally insisting its model config equals
/// `expected`.
pub fn load_checked(path: &Path, expected: Option<&ModelConfig>) -> Result<Model> {
    let model = checkpoint::load(path)?;
    if let Some(exp) = expected {
        let diffs = model.config.diff(exp);
        if !diffs.is_empty() {
            return Err(Error::ConfigMismatch(diffs));
        }
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub record: MetricsRecord,
    pub delta_loss: f64,
    pub delta_perplexity: f64,
}

/// Evaluates the full model and each component forced to zero in turn.
/// Decoded-trajectory scores are computed for the full row only.
pub fn ablate(model: &Model, dataset: &Dataset, cfg: &EvalConfig, exec: Exec) -> Result<Vec<AblationRow>> {
    if model.config.variant != Variant::Mppa || !Component::ALL.iter().all(|&c| model.config.is_enabled(c)) {
        return Err(Error::Config(
            "ablation needs an mppa checkpoint with every component enabled".into(),
        ));
    }
    let mut full = evaluate(model, dataset, cfg, Ablation::none(), exec)?;
    full.label = "full".into();
    let mut rows = vec![AblationRow {
        record: full.clone(),
        delta_loss: 0.0,
        delta_perplexity: 0.0,
    }];
    for c in Component::ALL {
        let mut rec = evaluate(model, dataset, cfg, Ablation::zeroing(c), exec)?;
        rec.label = format!("no_{}", c.name());
        rows.push(AblationRow {
            delta_loss: rec.val_loss - full.val_loss,
            delta_perplexity: rec.val_perplexity - full.val_perplexity,
            record: rec,
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<18} {:>12} {:>12} {:>12} {:>12}\n",
        "variant", "val_loss", "val_ppl", "d_loss", "d_ppl"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<18} {:>12.6} {:>12.4} {:>+12.6} {:>+12.4}",
            r.record.label, r.record.val_loss, r.record.val_perplexity, r.delta_loss, r.delta_perplexity
        );
    }
    s
}
