//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Graph`] records every operation eagerly: each method computes its
//! output immediately (so the forward pass is the graph construction) and
//! stores enough to replay the vector-Jacobian product later. Node values are
//! checked for NaN/Inf as they are produced.
//!
//! Fused operations (`chunk_energy`, `fft_mag_cols`, `ema_update`,
//! `layer_norm`, `cross_entropy`) call the same kernels as the plain
//! functions in their owning modules, so graph and non-graph evaluation agree
//! bit for bit.

use crate::energy::chunk_energy;
use crate::error::{Error, Result};
use crate::numerics::fft::{fft_forward, fft_inverse_unnormalized, ComplexVec};
use crate::numerics::tensor::{gelu, gelu_grad, sigmoid, Tensor};
use crate::periodicity::{chunk_spectrum, ema_update};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Gelu,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Gelu => gelu(x),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Gelu => "gelu",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulRowsBy(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    DivConst(Var, f64),
    Unary(Var, Unary),
    CausalSoftmax(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    PadRows(Var),
    Sum(Var),
    Mean(Var),
    ChunkEnergy(Var),
    FftMagCols(Var),
    EmaUpdate(Var, Var, Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    Gather(Var, Vec<usize>),
    PrefixMean(Var),
    SequenceMean(Var),
    CrossEntropy(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Registers parameter tensors as leaves and remembers the order they were
/// bound in, so gradients can be read back in the same order.
pub struct Binder<'g> {
    pub graph: &'g mut Graph,
    order: Vec<Var>,
}

impl<'g> Binder<'g> {
    pub fn new(graph: &'g mut Graph) -> Self {
        Self {
            graph,
            order: Vec::new(),
        }
    }

    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        let v = self.graph.leaf(t.clone())?;
        self.order.push(v);
        Ok(v)
    }

    pub fn finish(self) -> Vec<Var> {
        self.order
    }
}

/// Gradients of a scalar with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Inputs and parameters both enter as leaves.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push(v, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    /// `x[n,d] + b[1,d]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let v = self.value(x).add_row(self.value(b))?;
        self.push(v, Op::AddRow(x, b), "add_row")
    }

    /// `x[n,d] * v[1,d]` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let v = self.value(x).mul_row(self.value(r))?;
        self.push(v, Op::MulRow(x, r), "mul_row")
    }

    /// Row `t` of `x` scaled by `s[t]`, with `s` shaped `[n,1]`.
    pub fn mul_rows_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let v = self.value(x).mul_rows_by(self.value(s))?;
        self.push(v, Op::MulRowsBy(x, s), "mul_rows_by")
    }

    /// Every entry of `x` times the single value held by `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::Shape {
                op: "mul_scalar",
                left: self.value(x).shape().to_vec(),
                right: sv.shape().to_vec(),
            });
        }
        let f = sv.item();
        let v = self.value(x).scale(f);
        self.push(v, Op::MulScalar(x, s), "mul_scalar")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale(x, c), "scale")
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + c);
        self.push(v, Op::AddConst(x), "add_const")
    }

    pub fn div_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a / c);
        self.push(v, Op::DivConst(x, c), "div_const")
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let v = self.value(x).map(|a| f.apply(a));
        self.push(v, Op::Unary(x, f), f.name())
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Gelu)
    }

    /// Softmax over each row of a square score matrix after adding the
    /// lower-triangular causal mask (column `j` admissible in row `i` iff
    /// `j <= i`).
    pub fn causal_softmax(&mut self, scores: Var) -> Result<Var> {
        let s = self.value(scores);
        let n = s.rows();
        if s.cols() != n {
            return Err(Error::Shape {
                op: "causal_softmax",
                left: s.shape().to_vec(),
                right: vec![n, n],
            });
        }
        let mut masked = s.clone();
        for i in 0..n {
            for v in &mut masked.row_mut(i)[i + 1..] {
                *v = f64::NEG_INFINITY;
            }
        }
        let v = masked.softmax_rows()?;
        self.push(v, Op::CausalSoftmax(scores), "causal_softmax")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x).slice_rows(start, end)?;
        self.push(v, Op::SliceRows(x, start), "slice_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x).slice_cols(start, end)?;
        self.push(v, Op::SliceCols(x, start), "slice_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&refs)?;
        self.push(v, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&refs)?;
        self.push(v, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn pad_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let v = self.value(x).pad_rows(rows)?;
        self.push(v, Op::PadRows(x), "pad_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(x), "mean")
    }

    /// Mean of `log(1 + |row|^2)` over all rows of `x`.
    pub fn chunk_energy(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let e = chunk_energy(t, t.rows())?;
        self.push(Tensor::scalar(e), Op::ChunkEnergy(x), "chunk_energy")
    }

    /// Per-column DFT magnitudes of a `[C, d]` block.
    pub fn fft_mag_cols(&mut self, x: Var) -> Result<Var> {
        let v = chunk_spectrum(self.value(x))?;
        self.push(v, Op::FftMagCols(x), "fft_mag_cols")
    }

    /// `alpha * prev + (1 - alpha) * current` with a per-column `alpha[1,d]`.
    pub fn ema_update(&mut self, prev: Var, current: Var, alpha: Var) -> Result<Var> {
        let v = ema_update(self.value(prev), self.value(current), self.value(alpha))?;
        self.push(v, Op::EmaUpdate(prev, current, alpha), "ema_update")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let v = layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        self.push(v, Op::LayerNorm { x, gain, bias, eps }, "layer_norm")
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(Error::TokenOutOfRange {
                    position: pos,
                    token: id,
                    vocab: t.rows(),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let v = Tensor::new(vec![ids.len(), d], data)?;
        self.push(v, Op::Gather(table, ids.to_vec()), "gather")
    }

    /// Row `t` of the output is the mean of rows `0..=t` of `x`.
    pub fn prefix_mean(&mut self, x: Var) -> Result<Var> {
        let v = prefix_mean(self.value(x));
        self.push(v, Op::PrefixMean(x), "prefix_mean")
    }

    /// Every output row is the mean of all rows of `x`.
    pub fn sequence_mean(&mut self, x: Var) -> Result<Var> {
        let v = sequence_mean(self.value(x));
        self.push(v, Op::SequenceMean(x), "sequence_mean")
    }

    /// Mean next-token negative log-likelihood of `targets` under `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, _) = cross_entropy(self.value(logits), targets)?;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec()),
            "cross_entropy",
        )
    }

    /// Backpropagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(grads, *a, g.matmul(&bv.transpose()?)?)?;
                accumulate(grads, *b, av.transpose()?.matmul(g)?)?;
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?)?,
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.mul(self.value(*b))?)?;
                accumulate(grads, *b, g.mul(self.value(*a))?)?;
            }
            Op::AddRow(x, b) => {
                accumulate(grads, *x, g.clone())?;
                accumulate(grads, *b, column_sums(g, self.value(*b).shape()))?;
            }
            Op::MulRow(x, r) => {
                let rv = self.value(*r);
                accumulate(grads, *x, g.mul_row(rv)?)?;
                accumulate(grads, *r, column_sums(&g.mul(self.value(*x))?, rv.shape()))?;
            }
            Op::MulRowsBy(x, s) => {
                let sv = self.value(*s);
                accumulate(grads, *x, g.mul_rows_by(sv)?)?;
                let prod = g.mul(self.value(*x))?;
                let data = (0..prod.rows()).map(|r| row_sum(prod.row(r))).collect();
                accumulate(grads, *s, Tensor::new(sv.shape().to_vec(), data)?)?;
            }
            Op::MulScalar(x, s) => {
                let sv = self.value(*s);
                accumulate(grads, *x, g.scale(sv.item()))?;
                let ds = g.mul(self.value(*x))?.sum();
                accumulate(grads, *s, Tensor::full(sv.shape(), ds))?;
            }
            Op::Scale(x, c) => accumulate(grads, *x, g.scale(*c))?,
            Op::AddConst(x) => accumulate(grads, *x, g.clone())?,
            Op::DivConst(x, c) => accumulate(grads, *x, g.map(|v| v / c))?,
            Op::Unary(x, f) => {
                let xv = self.value(*x);
                let local = match f {
                    Unary::Exp => y.clone(),
                    Unary::Log => xv.map(|v| 1.0 / v),
                    Unary::Sigmoid => y.map(|s| s * (1.0 - s)),
                    Unary::Tanh => y.map(|t| 1.0 - t * t),
                    Unary::Gelu => xv.map(gelu_grad),
                };
                accumulate(grads, *x, g.mul(&local)?)?;
            }
            Op::CausalSoftmax(x) => {
                let c = y.cols();
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = yr.iter().zip(gr).fold(0.0, |acc, (a, b)| acc + a * b);
                    let out = dx.row_mut(r);
                    for j in 0..c {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let c = xv.cols();
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, dx)?;
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let w = g.cols();
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..start + w].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    accumulate(grads, p, g.slice_rows(offset, offset + rows)?)?;
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    accumulate(grads, p, g.slice_cols(offset, offset + cols)?)?;
                    offset += cols;
                }
            }
            Op::PadRows(x) => {
                let rows = self.value(*x).rows();
                accumulate(grads, *x, g.slice_rows(0, rows)?)?;
            }
            Op::Sum(x) => {
                let s = g.item();
                accumulate(grads, *x, Tensor::full(self.value(*x).shape(), s))?;
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.item() / xv.len() as f64;
                accumulate(grads, *x, Tensor::full(xv.shape(), s))?;
            }
            Op::ChunkEnergy(x) => {
                let xv = self.value(*x);
                let m = xv.rows() as f64;
                let gs = g.item();
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let sq = row.iter().fold(0.0, |acc, v| acc + v * v);
                    let coef = gs * 2.0 / (m * (1.0 + sq));
                    for (d, v) in dx.row_mut(r).iter_mut().zip(row) {
                        *d = coef * v;
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::FftMagCols(x) => accumulate(grads, *x, fft_mag_cols_backward(self.value(*x), y, g)?)?,
            Op::EmaUpdate(prev, current, alpha) => {
                let pv = self.value(*prev);
                let cv = self.value(*current);
                let av = self.value(*alpha);
                let one_minus = av.map(|a| 1.0 - a);
                accumulate(grads, *prev, g.mul_row(av)?)?;
                accumulate(grads, *current, g.mul_row(&one_minus)?)?;
                let diff = pv.sub(cv)?;
                accumulate(grads, *alpha, column_sums(&g.mul(&diff)?, av.shape()))?;
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (dx, dg, db) = layer_norm_backward(self.value(*x), self.value(*gain), g, *eps)?;
                accumulate(grads, *x, dx)?;
                accumulate(grads, *gain, dg)?;
                accumulate(grads, *bias, db)?;
            }
            Op::Gather(table, ids) => {
                let tv = self.value(*table);
                let mut dt = Tensor::zeros(tv.shape());
                for (pos, &id) in ids.iter().enumerate() {
                    for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(pos)) {
                        *d += v;
                    }
                }
                accumulate(grads, *table, dt)?;
            }
            Op::PrefixMean(x) => {
                let n = g.rows();
                let mut dx = Tensor::zeros(g.shape());
                let mut acc = vec![0.0; g.cols()];
                for t in (0..n).rev() {
                    let w = 1.0 / (t + 1) as f64;
                    for (a, v) in acc.iter_mut().zip(g.row(t)) {
                        *a += v * w;
                    }
                    dx.row_mut(t).copy_from_slice(&acc);
                }
                accumulate(grads, *x, dx)?;
            }
            Op::SequenceMean(x) => {
                let n = g.rows();
                let mut total = vec![0.0; g.cols()];
                for t in 0..n {
                    for (a, v) in total.iter_mut().zip(g.row(t)) {
                        *a += v;
                    }
                }
                let row: Vec<f64> = total.iter().map(|v| v / n as f64).collect();
                let mut dx = Tensor::zeros(g.shape());
                for t in 0..n {
                    dx.row_mut(t).copy_from_slice(&row);
                }
                accumulate(grads, *x, dx)?;
            }
            Op::CrossEntropy(logits, targets) => {
                let lv = self.value(*logits);
                let n = targets.len() as f64;
                let mut dl = lv.softmax_rows()?;
                for (r, &t) in targets.iter().enumerate() {
                    dl.row_mut(r)[t] -= 1.0;
                }
                accumulate(grads, *logits, dl.scale(g.item() / n))?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            if existing.shape() != delta.shape() {
                return Err(Error::Shape {
                    op: "accumulate",
                    left: existing.shape().to_vec(),
                    right: delta.shape().to_vec(),
                });
            }
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
    Ok(())
}

fn row_sum(row: &[f64]) -> f64 {
    row.iter().fold(0.0, |acc, v| acc + v)
}

fn column_sums(g: &Tensor, shape: &[usize]) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("column sum shape")
}

/// `|F|` is differentiated through the real DFT map; a bin with zero
/// magnitude contributes zero gradient.
fn fft_mag_cols_backward(x: &Tensor, mags: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (c, d) = (x.rows(), x.cols());
    let mut dx = Tensor::zeros(x.shape());
    for f in 0..d {
        let col: Vec<f64> = (0..c).map(|t| x.get(t, f)).collect();
        let spec = fft_forward(&ComplexVec::from_real(&col))?;
        let mut w = ComplexVec::from_real(&vec![0.0; c]);
        for k in 0..c {
            let m = mags.get(k, f);
            if m != 0.0 {
                let s = g.get(k, f) / m;
                w.re[k] = s * spec.re[k];
                w.im[k] = s * spec.im[k];
            }
        }
        let back = fft_inverse_unnormalized(&w)?;
        for t in 0..c {
            dx.set(t, f, back.re[t]);
        }
    }
    Ok(dx)
}

/// Per-row normalization to zero mean and unit variance, then `* gain + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(x.shape());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row_sum(row) / d as f64;
        let var = row.iter().fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (row[j] - mean) * inv * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(out)
}

fn layer_norm_backward(x: &Tensor, gain: &Tensor, g: &Tensor, eps: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let d = x.cols();
    let dn = d as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    for r in 0..x.rows() {
        let row = x.row(r);
        let gr = g.row(r);
        let mean = row_sum(row) / dn;
        let var = row.iter().fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / dn;
        let inv = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
        let dxhat: Vec<f64> = gr.iter().zip(gain.data()).map(|(a, b)| a * b).collect();
        let mean_dxhat = row_sum(&dxhat) / dn;
        let mean_dxhat_xhat = dxhat.iter().zip(&xhat).fold(0.0, |acc, (a, b)| acc + a * b) / dn;
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
            dg[j] += gr[j] * xhat[j];
            db[j] += gr[j];
        }
    }
    Ok((
        dx,
        Tensor::new(gain.shape().to_vec(), dg)?,
        Tensor::new(gain.shape().to_vec(), db)?,
    ))
}

pub fn prefix_mean(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    let mut acc = vec![0.0; x.cols()];
    for t in 0..x.rows() {
        let w = (t + 1) as f64;
        for ((a, v), o) in acc.iter_mut().zip(x.row(t)).zip(out.row_mut(t)) {
            *a += v;
            *o = *a / w;
        }
    }
    out
}

pub fn sequence_mean(x: &Tensor) -> Tensor {
    let n = x.rows();
    let mut acc = vec![0.0; x.cols()];
    for t in 0..n {
        for (a, v) in acc.iter_mut().zip(x.row(t)) {
            *a += v;
        }
    }
    let mut out = Tensor::zeros(x.shape());
    for t in 0..n {
        for (o, a) in out.row_mut(t).iter_mut().zip(&acc) {
            *o = a / n as f64;
        }
    }
    out
}

/// Mean and per-row negative log-likelihood of `targets[t]` under the
/// softmax of `logits` row `t`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let v = logits.cols();
    let mut losses = Vec::with_capacity(targets.len());
    for (r, &t) in targets.iter().enumerate() {
        if t >= v {
            return Err(Error::TokenOutOfRange {
                position: r,
                token: t,
                vocab: v,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum = row.iter().fold(0.0, |acc, z| acc + (z - max).exp());
        losses.push(max + sum.ln() - row[t]);
    }
    let mean = row_sum(&losses) / losses.len() as f64;
    Ok((mean, losses))
}
