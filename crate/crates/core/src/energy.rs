//! Chunked energy tracking with delayed debt compensation.
//!
//! The sequence is cut into chunks of `C` rows. Each chunk's energy is the
//! mean of `log(1 + |h_t|^2)` over its real rows; a running sum of
//! `log(E_j + eps)` gives the geometric mean of all earlier chunks, and a
//! chunk's debt is its energy minus that mean (the first chunk's debt is 0).
//! Chunk `i` is scaled by `exp(sigmoid(D_{i-2}) * I)`: a debt only takes
//! effect two chunks after it was incurred, and chunks 1 and 2 pass through
//! unchanged.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Graph, Tensor, Var};

/// Stability constant inside `log(E + eps)`.
pub const ENERGY_EPS: f64 = 1e-6;

/// How an `n`-row sequence splits into chunks of `chunk_size` rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkLayout {
    pub chunk_size: usize,
    pub valid_lens: Vec<usize>,
}

impl ChunkLayout {
    pub fn new(n: usize, chunk_size: usize) -> Result<Self> {
        if n == 0 || chunk_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "chunk layout needs n >= 1 and C >= 1 (got n={n}, C={chunk_size})"
            )));
        }
        let count = n.div_ceil(chunk_size);
        let valid_lens = (0..count).map(|i| chunk_size.min(n - i * chunk_size)).collect();
        Ok(Self { chunk_size, valid_lens })
    }

    pub fn num_chunks(&self) -> usize {
        self.valid_lens.len()
    }

    pub fn seq_len(&self) -> usize {
        self.valid_lens.iter().sum()
    }

    pub fn chunk_of(&self, t: usize) -> usize {
        t / self.chunk_size
    }

    /// Row range of chunk `i` within the unpadded sequence.
    pub fn rows(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.chunk_size;
        start..start + self.valid_lens[i]
    }
}

/// Splits `h` into zero-padded `[C, d]` chunks.
pub fn chunk_sequence(h: &Tensor, chunk_size: usize) -> Result<(ChunkLayout, Vec<Tensor>)> {
    let layout = ChunkLayout::new(h.rows(), chunk_size)?;
    let chunks = (0..layout.num_chunks())
        .map(|i| {
            let r = layout.rows(i);
            h.slice_rows(r.start, r.end)?.pad_rows(chunk_size)
        })
        .collect::<Result<_>>()?;
    Ok((layout, chunks))
}

/// Mean of `log(1 + |h_t|^2)` over the first `valid_len` rows of `chunk`.
pub fn chunk_energy(chunk: &Tensor, valid_len: usize) -> Result<f64> {
    if valid_len == 0 || valid_len > chunk.rows() {
        return Err(Error::InvalidArgument(format!(
            "chunk energy needs 1 <= valid_len <= {} (got {valid_len})",
            chunk.rows()
        )));
    }
    let mut total = 0.0;
    for t in 0..valid_len {
        let sq = chunk.row(t).iter().fold(0.0, |acc, v| acc + v * v);
        total += (1.0 + sq).ln();
    }
    Ok(total / valid_len as f64)
}

/// Learnable compensation intensity `I` (a `[1, 1]` tensor).
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyParams {
    pub intensity: Tensor,
}

impl EnergyParams {
    /// `I = 0`: the component starts as the identity map.
    pub fn identity() -> Self {
        Self {
            intensity: Tensor::scalar(0.0),
        }
    }

    pub fn with_intensity(i: f64) -> Self {
        Self {
            intensity: Tensor::scalar(i),
        }
    }
}

/// Streaming state carried from chunk to chunk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyState {
    log_energy_sum: f64,
    debts: Vec<f64>,
}

impl EnergyState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn chunks_seen(&self) -> usize {
        self.debts.len()
    }

    pub fn log_energy_sum(&self) -> f64 {
        self.log_energy_sum
    }

    /// Debts of every chunk seen so far, oldest first.
    pub fn debts(&self) -> &[f64] {
        &self.debts
    }

    /// Debt incurred two chunks before the next one, if it exists.
    pub fn debt_two_back(&self) -> Option<f64> {
        let k = self.debts.len();
        (k >= 2).then(|| self.debts[k - 2])
    }

    /// Folds one chunk's energy into the history.
    pub fn record(&mut self, energy: f64) -> Result<f64> {
        let debt = if self.debts.is_empty() {
            0.0
        } else {
            compute_debt(energy, geometric_mean_energy(self)?)
        };
        self.debts.push(debt);
        self.log_energy_sum += (energy + ENERGY_EPS).ln();
        Ok(debt)
    }

    /// Processes the next chunk (its real rows only) and returns the
    /// compensated rows.
    pub fn step(&mut self, rows: &Tensor, params: &EnergyParams) -> Result<Tensor> {
        let out = apply_compensation(rows, self.debt_two_back(), params.intensity.item())?;
        self.record(chunk_energy(rows, rows.rows())?)?;
        Ok(out)
    }
}

/// `exp(L / k)` over the `k` chunks recorded so far.
pub fn geometric_mean_energy(state: &EnergyState) -> Result<f64> {
    let k = state.chunks_seen();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "geometric mean energy requested before any chunk was seen".into(),
        ));
    }
    Ok((state.log_energy_sum / k as f64).exp())
}

pub fn compute_debt(energy: f64, mean: f64) -> f64 {
    energy - mean
}

/// `exp(sigmoid(debt) * intensity)`.
pub fn compensation_factor(debt: f64, intensity: f64) -> f64 {
    (sigmoid(debt) * intensity).exp()
}

pub fn apply_compensation(chunk: &Tensor, debt_two_back: Option<f64>, intensity: f64) -> Result<Tensor> {
    match debt_two_back {
        None => Ok(chunk.clone()),
        Some(d) => {
            let f = compensation_factor(d, intensity);
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    op: "apply_compensation",
                });
            }
            Ok(chunk.scale(f))
        }
    }
}

/// Energy path on the graph; `h` is `[n, d]`, `intensity` is `[1, 1]`.
pub fn energy_graph(g: &mut Graph, h: Var, intensity: Var, chunk_size: usize) -> Result<Var> {
    let layout = ChunkLayout::new(g.value(h).rows(), chunk_size)?;
    let mut outs = Vec::with_capacity(layout.num_chunks());
    let mut debts: Vec<Var> = Vec::with_capacity(layout.num_chunks());
    let mut log_sum: Option<Var> = None;
    for i in 0..layout.num_chunks() {
        let r = layout.rows(i);
        let rows = if layout.num_chunks() == 1 {
            h
        } else {
            g.slice_rows(h, r.start, r.end)?
        };
        outs.push(if i >= 2 {
            let s = g.sigmoid(debts[i - 2])?;
            let si = g.mul(s, intensity)?;
            let factor = g.exp(si)?;
            g.mul_scalar(rows, factor)?
        } else {
            rows
        });
        // The last two debts never reach an output row.
        if i + 2 >= layout.num_chunks() {
            continue;
        }
        let e = g.chunk_energy(rows)?;
        let debt = match log_sum {
            None => g.leaf(Tensor::scalar(0.0))?,
            Some(l) => {
                let avg = g.div_const(l, i as f64)?;
                let mean = g.exp(avg)?;
                g.sub(e, mean)?
            }
        };
        debts.push(debt);
        let shifted = g.add_const(e, ENERGY_EPS)?;
        let log_e = g.log(shifted)?;
        log_sum = Some(match log_sum {
            None => log_e,
            Some(l) => g.add(l, log_e)?,
        });
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat_rows(&outs)
    }
}

/// Batch energy encoding of a whole `[n, d]` sequence.
pub fn energy_encode(h: &Tensor, params: &EnergyParams, chunk_size: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let hv = g.leaf(h.clone())?;
    let iv = g.leaf(params.intensity.clone())?;
    let out = energy_graph(&mut g, hv, iv, chunk_size)?;
    Ok(g.value(out).clone())
}

/// Chunk-at-a-time encoding through [`EnergyState`].
pub fn energy_encode_streaming(h: &Tensor, params: &EnergyParams, chunk_size: usize) -> Result<Tensor> {
    let layout = ChunkLayout::new(h.rows(), chunk_size)?;
    let mut state = EnergyState::new();
    let mut outs = Vec::with_capacity(layout.num_chunks());
    for i in 0..layout.num_chunks() {
        let r = layout.rows(i);
        outs.push(state.step(&h.slice_rows(r.start, r.end)?, params)?);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    Tensor::concat_rows(&refs)
}
