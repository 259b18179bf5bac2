//! Uniform per-channel quantization.
//!
//! A trajectory becomes `BOS, x0_0, x0_1, .., x1_0, x1_1, ..`: state-major,
//! channels interleaved in state order. Every channel value is clipped to
//! `[value_min, value_max]` and mapped to one of `bins` equal-width bins.
//! Token ids `0..bins` are values, `bins` is BOS and `bins + 1` is SEP (used
//! as end-of-data padding).

use serde::{Deserialize, Serialize};

use crate::datagen::systems::Trajectory;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSpec {
    pub value_min: f64,
    pub value_max: f64,
    pub bins: usize,
    /// Total tokens per sequence including BOS.
    pub seq_len: usize,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        Self {
            value_min: -3.0,
            value_max: 3.0,
            bins: 62,
            seq_len: 128,
        }
    }
}

impl TokenizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be >= 2, got {}", self.bins)));
        }
        if !(self.value_min < self.value_max) {
            return Err(Error::Config(format!(
                "value_min {} must be below value_max {}",
                self.value_min, self.value_max
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be >= 2".into()));
        }
        Ok(())
    }

    pub fn bos(&self) -> usize {
        self.bins
    }

    pub fn sep(&self) -> usize {
        self.bins + 1
    }

    pub fn vocab_size(&self) -> usize {
        self.bins + 2
    }

    pub fn bin_width(&self) -> f64 {
        (self.value_max - self.value_min) / self.bins as f64
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.value_min, self.value_max)
    }

    pub fn quantize(&self, v: f64) -> usize {
        let c = self.clip(v);
        let idx = (self.bins as f64 * (c - self.value_min) / (self.value_max - self.value_min)).floor();
        (idx as usize).min(self.bins - 1)
    }

    /// Center of bin `idx`.
    pub fn dequantize(&self, idx: usize) -> f64 {
        self.value_min + (idx as f64 + 0.5) * self.bin_width()
    }

    pub fn is_value(&self, token: usize) -> bool {
        token < self.bins
    }
}

/// Tokenizes `traj` with every channel value multiplied by `scale` first.
pub fn tokenize_scaled(traj: &Trajectory, tok: &TokenizerSpec, scale: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(tok.seq_len);
    out.push(tok.bos());
    'outer: for state in &traj.states {
        for &v in state {
            if out.len() == tok.seq_len {
                break 'outer;
            }
            out.push(tok.quantize(v * scale));
        }
    }
    out.resize(tok.seq_len, tok.sep());
    out
}

pub fn tokenize(traj: &Trajectory, tok: &TokenizerSpec) -> Vec<usize> {
    tokenize_scaled(traj, tok, 1.0)
}

/// Value tokens back to bin centers, one flat list in token order. BOS is
/// skipped; decoding stops at the first non-value token after it.
pub fn detokenize_values(tokens: &[usize], tok: &TokenizerSpec) -> Vec<f64> {
    tokens
        .iter()
        .skip_while(|&&t| t == tok.bos())
        .take_while(|&&t| tok.is_value(t))
        .map(|&t| tok.dequantize(t))
        .collect()
}

/// Regroups flat values into states of `dim` channels; a trailing partial
/// state is dropped.
pub fn group_states(values: &[f64], dim: usize) -> Vec<Vec<f64>> {
    values.chunks_exact(dim).map(<[f64]>::to_vec).collect()
}
