use crate::energy::energy_graph;
use crate::error::{Error, Result};
use crate::gravitator::attention_graph;
use crate::model::config::{Component, Gating, ModelConfig, Variant};
use crate::model::params::{BlockParams, BlockVars, GateParams, ModelParams, ModelVars};
use crate::numerics::graph::{cross_entropy, Binder};
use crate::numerics::{Graph, Tensor, Var};
use crate::periodicity::periodicity_graph;

const LN_EPS: f64 = 1e-5;

/// Components whose output is computed and then replaced by zeros.
///
/// This is the gate-forcing ablation: the component still runs, but its
/// contribution to the fused residual is exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub zero: [bool; 3],
}

impl Ablation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn zeroing(c: Component) -> Self {
        let mut a = Self::default();
        a.zero[component_index(c)] = true;
        a
    }

    pub fn zeroes(&self, c: Component) -> bool {
        self.zero[component_index(c)]
    }
}

fn component_index(c: Component) -> usize {
    match c {
        Component::Gravitator => 0,
        Component::Energy => 1,
        Component::Periodicity => 2,
    }
}

fn pool(g: &mut Graph, h: Var, gating: Gating) -> Result<Var> {
    match gating {
        Gating::CausalPrefix => g.prefix_mean(h),
        Gating::SequenceMean => g.sequence_mean(h),
    }
}

fn gate_graph(g: &mut Graph, pooled: Var, w: Var, b: Var) -> Result<Var> {
    let s = g.matmul(pooled, w)?;
    let s = g.add_row(s, b)?;
    g.sigmoid(s)
}

/// Gate tracks `[n, 1]` for gravitator, energy and periodicity.
pub fn gate_values(h: &Tensor, gates: &GateParams, gating: Gating) -> Result<[Tensor; 3]> {
    let mut g = Graph::new();
    let hv = g.leaf(h.clone())?;
    let pooled = pool(&mut g, hv, gating)?;
    let mut out: [Tensor; 3] = std::array::from_fn(|_| Tensor::zeros(&[0]));
    for c in 0..3 {
        let w = g.leaf(gates.w[c].clone())?;
        let b = g.leaf(gates.b[c].clone())?;
        let v = gate_graph(&mut g, pooled, w, b)?;
        out[c] = g.value(v).clone();
    }
    Ok(out)
}

fn component_output(
    g: &mut Graph,
    cfg: &ModelConfig,
    ablation: Ablation,
    c: Component,
    zeros: Var,
    compute: impl FnOnce(&mut Graph) -> Result<Var>,
) -> Result<Var> {
    if !cfg.is_enabled(c) {
        return Ok(zeros);
    }
    let out = compute(g)?;
    Ok(if ablation.zeroes(c) { zeros } else { out })
}

pub(crate) fn block_graph(g: &mut Graph, x: Var, v: &BlockVars, cfg: &ModelConfig, ablation: Ablation) -> Result<Var> {
    let h = g.layer_norm(x, v.ln1[0], v.ln1[1], LN_EPS)?;
    let shape = g.value(x).shape().to_vec();
    let zeros = g.leaf(Tensor::zeros(&shape))?;
    let z = component_output(g, cfg, ablation, Component::Gravitator, zeros, |g| {
        attention_graph(g, h, &v.attention)
    })?;
    let fused = match cfg.variant {
        Variant::Baseline => g.add(x, z)?,
        Variant::Mppa => {
            let missing = |what: &str| Error::InvalidArgument(format!("gated block is missing {what} parameters"));
            let intensity = v.energy.ok_or_else(|| missing("energy"))?;
            let pvars = v.periodicity.as_ref().ok_or_else(|| missing("periodicity"))?;
            let (gw, gb) = v.gates.ok_or_else(|| missing("gate"))?;
            let e = component_output(g, cfg, ablation, Component::Energy, zeros, |g| {
                energy_graph(g, h, intensity, cfg.chunk_size)
            })?;
            let t = component_output(g, cfg, ablation, Component::Periodicity, zeros, |g| {
                periodicity_graph(g, h, pvars, cfg.chunk_size)
            })?;
            let pooled = pool(g, h, cfg.gating)?;
            let mut acc = x;
            for (c, comp) in [z, e, t].into_iter().enumerate() {
                let gate = gate_graph(g, pooled, gw[c], gb[c])?;
                let scaled = g.mul_rows_by(comp, gate)?;
                acc = g.add(acc, scaled)?;
            }
            acc
        }
    };
    let h2 = g.layer_norm(fused, v.ln2[0], v.ln2[1], LN_EPS)?;
    let f = g.matmul(h2, v.ff[0])?;
    let f = g.add_row(f, v.ff[1])?;
    let f = g.gelu(f)?;
    let f = g.matmul(f, v.ff[2])?;
    let f = g.add_row(f, v.ff[3])?;
    g.add(fused, f)
}

/// One block applied to an `[n, d]` input.
pub fn block_forward(x: &Tensor, p: &BlockParams, cfg: &ModelConfig) -> Result<Tensor> {
    block_forward_ablated(x, p, cfg, Ablation::none())
}

pub fn block_forward_ablated(x: &Tensor, p: &BlockParams, cfg: &ModelConfig, ablation: Ablation) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone())?;
    let vars = p.bind(&mut Binder::new(&mut g))?;
    let out = block_graph(&mut g, xv, &vars, cfg, ablation)?;
    Ok(g.value(out).clone())
}

pub(crate) fn model_graph(
    g: &mut Graph,
    tokens: &[usize],
    v: &ModelVars,
    cfg: &ModelConfig,
    ablation: Ablation,
) -> Result<Var> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if n > cfg.n_max {
        return Err(Error::InvalidArgument(format!(
            "sequence length {n} exceeds n_max={}",
            cfg.n_max
        )));
    }
    let emb = g.gather(v.token_embedding, tokens)?;
    let pos = g.slice_rows(v.position_embedding, 0, n)?;
    let mut x = g.add(emb, pos)?;
    for b in &v.blocks {
        x = block_graph(g, x, b, cfg, ablation)?;
    }
    let xf = g.layer_norm(x, v.ln_f[0], v.ln_f[1], LN_EPS)?;
    let head = g.transpose(v.token_embedding)?;
    g.matmul(xf, head)
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if params.blocks.len() != config.layers {
            return Err(Error::Config(format!(
                "config has {} layers, parameters have {}",
                config.layers,
                params.blocks.len()
            )));
        }
        Ok(Self { config, params })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &t)| t >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                position,
                token,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits `[n, vocab]`; row `t` depends on tokens `0..=t` only.
    pub fn forward(&self, tokens: &[usize]) -> Result<Tensor> {
        self.forward_ablated(tokens, Ablation::none())
    }

    pub fn forward_ablated(&self, tokens: &[usize], ablation: Ablation) -> Result<Tensor> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut Binder::new(&mut g))?;
        let logits = model_graph(&mut g, tokens, &vars, &self.config, ablation)?;
        Ok(g.value(logits).clone())
    }

    /// Per-token next-token losses for `sequence[1..]` given `sequence[..n-1]`.
    pub fn token_losses(&self, sequence: &[usize], ablation: Ablation) -> Result<Vec<f64>> {
        let (inputs, targets) = split_next_token(sequence)?;
        let logits = self.forward_ablated(inputs, ablation)?;
        Ok(cross_entropy_loss(&logits, targets)?.1)
    }

    /// Mean next-token loss and its gradient for every parameter tensor, in
    /// canonical order.
    pub fn loss_and_grads(&self, sequence: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let (inputs, targets) = split_next_token(sequence)?;
        self.check_tokens(sequence)?;
        let mut g = Graph::new();
        let mut binder = Binder::new(&mut g);
        let vars = self.params.bind(&mut binder)?;
        let order = binder.finish();
        let logits = model_graph(&mut g, inputs, &vars, &self.config, Ablation::none())?;
        let loss = g.cross_entropy(logits, targets)?;
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let tensors = self
            .params
            .named_tensors()
            .into_iter()
            .zip(order)
            .map(|((_, t), v)| grads.take_or_zeros(v, t))
            .collect();
        Ok((value, tensors))
    }

    /// Next-token predicted by the most likely logit at the last position.
    pub fn greedy_next(&self, tokens: &[usize]) -> Result<usize> {
        let logits = self.forward(tokens)?;
        let last = logits.row(logits.rows() - 1);
        let mut best = 0;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

fn split_next_token(sequence: &[usize]) -> Result<(&[usize], &[usize])> {
    if sequence.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two tokens for a next-token loss".into(),
        ));
    }
    Ok((&sequence[..sequence.len() - 1], &sequence[1..]))
}

/// Mean negative log-likelihood and per-token losses.
pub fn cross_entropy_loss(logits: &Tensor, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    cross_entropy(logits, targets)
}

pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}
