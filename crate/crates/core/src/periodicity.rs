//! Chunked spectral modulation.
//!
//! Each chunk's per-feature DFT magnitudes are folded into an exponential
//! moving average `S` with a learnable per-feature decay in `(0.1, 0.9)`.
//! Chunk `i` is multiplied elementwise by `MLP(S_{i-1})`, so a chunk is only
//! ever modulated by the spectra of earlier chunks; the first chunk passes
//! through unchanged. The MLP ends in `2 * sigmoid`, so factors lie in
//! `(0, 2)` and a zero output layer is the identity.

use crate::error::{Error, Result};
use crate::numerics::fft::{check_power_of_two, fft_forward, ComplexVec};
use crate::numerics::tensor::gelu;
use crate::numerics::{sigmoid, Binder, Graph, Rng, Tensor, Var};

const DECAY_MIN: f64 = 0.1;
const DECAY_SPAN: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicityParams {
    /// Decay logits, `[1, d]`.
    pub alpha_raw: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl PeriodicityParams {
    /// Random first layer, zero output layer (identity modulation).
    pub fn init(rng: &mut Rng, d: usize, hidden: usize) -> Self {
        Self {
            alpha_raw: Tensor::zeros(&[1, d]),
            w1: Tensor::randn(rng, &[d, hidden], 1.0 / (d as f64).sqrt()),
            b1: Tensor::zeros(&[1, hidden]),
            w2: Tensor::zeros(&[hidden, d]),
            b2: Tensor::zeros(&[1, d]),
        }
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            alpha_raw: Tensor::zeros(&[1, d]),
            w1: Tensor::zeros(&[d, hidden]),
            b1: Tensor::zeros(&[1, hidden]),
            w2: Tensor::zeros(&[hidden, d]),
            b2: Tensor::zeros(&[1, d]),
        }
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.alpha_raw"), &self.alpha_raw);
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.w2"), &self.w2);
        f(format!("{prefix}.b2"), &self.b2);
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor)) {
        f(&mut self.alpha_raw);
        f(&mut self.w1);
        f(&mut self.b1);
        f(&mut self.w2);
        f(&mut self.b2);
    }

    pub fn bind(&self, b: &mut Binder) -> Result<PeriodicityVars> {
        Ok(PeriodicityVars {
            alpha_raw: b.param(&self.alpha_raw)?,
            w1: b.param(&self.w1)?,
            b1: b.param(&self.b1)?,
            w2: b.param(&self.w2)?,
            b2: b.param(&self.b2)?,
        })
    }
}

pub struct PeriodicityVars {
    alpha_raw: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// `0.1 + 0.8 * sigmoid(alpha_raw)`, elementwise.
pub fn effective_decay(alpha_raw: &Tensor) -> Tensor {
    alpha_raw.map(|a| sigmoid(a) * DECAY_SPAN + DECAY_MIN)
}

/// Per-column DFT magnitudes of a `[C, d]` chunk (`C` a power of two).
pub fn chunk_spectrum(chunk: &Tensor) -> Result<Tensor> {
    let (c, d) = (chunk.rows(), chunk.cols());
    check_power_of_two(c)?;
    let mut out = Tensor::zeros(chunk.shape());
    let mut col = vec![0.0; c];
    for f in 0..d {
        for (t, v) in col.iter_mut().enumerate() {
            *v = chunk.get(t, f);
        }
        let mags = fft_forward(&ComplexVec::from_real(&col))?.magnitudes();
        for (k, m) in mags.into_iter().enumerate() {
            out.set(k, f, m);
        }
    }
    Ok(out)
}

/// `S[k,f] = alpha[f] * prev[k,f] + (1 - alpha[f]) * current[k,f]`.
pub fn ema_update(prev: &Tensor, current: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    if prev.shape() != current.shape() || alpha.len() != prev.cols() {
        return Err(Error::Shape {
            op: "ema_update",
            left: prev.shape().to_vec(),
            right: current.shape().to_vec(),
        });
    }
    let mut out = prev.clone();
    for k in 0..prev.rows() {
        let cur = current.row(k);
        for (f, s) in out.row_mut(k).iter_mut().enumerate() {
            let a = alpha.data()[f];
            *s = a * *s + (1.0 - a) * cur[f];
        }
    }
    Ok(out)
}

/// Shared MLP applied to every frequency row of `s_prev`, ending in
/// `2 * sigmoid`.
pub fn modulation_map(s_prev: &Tensor, p: &PeriodicityParams) -> Result<Tensor> {
    let hidden = s_prev.matmul(&p.w1)?.add_row(&p.b1)?.map(gelu);
    let out = hidden.matmul(&p.w2)?.add_row(&p.b2)?;
    Ok(out.map(|v| sigmoid(v) * 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicityState {
    spectrum: Tensor,
    chunks_seen: usize,
}

impl PeriodicityState {
    pub fn new(chunk_size: usize, d: usize) -> Result<Self> {
        check_power_of_two(chunk_size)?;
        Ok(Self {
            spectrum: Tensor::zeros(&[chunk_size, d]),
            chunks_seen: 0,
        })
    }

    pub fn spectrum(&self) -> &Tensor {
        &self.spectrum
    }

    pub fn chunks_seen(&self) -> usize {
        self.chunks_seen
    }

    /// Processes the next chunk (its real rows only, at most `C`) and returns
    /// the modulated rows.
    pub fn step(&mut self, rows: &Tensor, p: &PeriodicityParams) -> Result<Tensor> {
        let c = self.spectrum.rows();
        let out = if self.chunks_seen == 0 {
            rows.clone()
        } else {
            let m = modulation_map(&self.spectrum, p)?;
            rows.mul(&m.slice_rows(0, rows.rows())?)?
        };
        let spec = chunk_spectrum(&rows.pad_rows(c)?)?;
        self.spectrum = ema_update(&self.spectrum, &spec, &effective_decay(&p.alpha_raw))?;
        self.chunks_seen += 1;
        Ok(out)
    }
}

fn modulation_graph(g: &mut Graph, s: Var, p: &PeriodicityVars) -> Result<Var> {
    let h = g.matmul(s, p.w1)?;
    let h = g.add_row(h, p.b1)?;
    let h = g.gelu(h)?;
    let o = g.matmul(h, p.w2)?;
    let o = g.add_row(o, p.b2)?;
    let o = g.sigmoid(o)?;
    g.scale(o, 2.0)
}

/// Periodicity path on the graph for an `[n, d]` input.
pub fn periodicity_graph(g: &mut Graph, h: Var, p: &PeriodicityVars, chunk_size: usize) -> Result<Var> {
    check_power_of_two(chunk_size)?;
    let (n, d) = (g.value(h).rows(), g.value(h).cols());
    let count = n.div_ceil(chunk_size);
    if count <= 1 {
        return Ok(h);
    }
    let sig = g.sigmoid(p.alpha_raw)?;
    let span = g.scale(sig, DECAY_SPAN)?;
    let alpha = g.add_const(span, DECAY_MIN)?;
    let mut state = g.leaf(Tensor::zeros(&[chunk_size, d]))?;
    let mut outs = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * chunk_size;
        let end = (start + chunk_size).min(n);
        let rows = g.slice_rows(h, start, end)?;
        if i == 0 {
            outs.push(rows);
        } else {
            let m = modulation_graph(g, state, p)?;
            let m = if end - start < chunk_size {
                g.slice_rows(m, 0, end - start)?
            } else {
                m
            };
            outs.push(g.mul(rows, m)?);
        }
        if i + 1 < count {
            let padded = if end - start < chunk_size {
                g.pad_rows(rows, chunk_size)?
            } else {
                rows
            };
            let spec = g.fft_mag_cols(padded)?;
            state = g.ema_update(state, spec, alpha)?;
        }
    }
    g.concat_rows(&outs)
}

pub fn periodicity_encode(h: &Tensor, p: &PeriodicityParams, chunk_size: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let hv = g.leaf(h.clone())?;
    let vars = p.bind(&mut Binder::new(&mut g))?;
    let out = periodicity_graph(&mut g, hv, &vars, chunk_size)?;
    Ok(g.value(out).clone())
}

/// Chunk-at-a-time encoding through [`PeriodicityState`].
pub fn periodicity_encode_streaming(h: &Tensor, p: &PeriodicityParams, chunk_size: usize) -> Result<Tensor> {
    let mut state = PeriodicityState::new(chunk_size, h.cols())?;
    let mut outs = Vec::new();
    let mut start = 0;
    while start < h.rows() {
        let end = (start + chunk_size).min(h.rows());
        outs.push(state.step(&h.slice_rows(start, end)?, p)?);
        start = end;
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    Tensor::concat_rows(&refs)
}
