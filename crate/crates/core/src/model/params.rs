use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::gravitator::{AttentionParams, AttentionVars};
use crate::model::config::{ModelConfig, Variant};
use crate::numerics::{Binder, Rng, Tensor, Var};
use crate::periodicity::{PeriodicityParams, PeriodicityVars};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    pub fn new(d: usize) -> Self {
        Self {
            gain: Tensor::full(&[1, d], 1.0),
            bias: Tensor::zeros(&[1, d]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Gate weights `[d, 1]` and biases `[1, 1]`, in the order
/// gravitator, energy, periodicity.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w: [Tensor; 3],
    pub b: [Tensor; 3],
}

impl GateParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Tensor::zeros(&[d, 1])),
            b: std::array::from_fn(|_| Tensor::scalar(0.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub attention: AttentionParams,
    /// Energy, periodicity and gates exist only in the gated variant.
    pub energy: Option<EnergyParams>,
    pub periodicity: Option<PeriodicityParams>,
    pub gates: Option<GateParams>,
    pub ln2: LayerNormParams,
    pub ff: FeedForwardParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub blocks: Vec<BlockParams>,
    pub ln_f: LayerNormParams,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.init_seed);
        let d = cfg.d;
        let out_std = 0.5 / ((d * cfg.layers) as f64).sqrt();
        let token_embedding = Tensor::randn(&mut rng, &[cfg.vocab_size, d], 0.02);
        let position_embedding = Tensor::randn(&mut rng, &[cfg.n_max, d], 0.02);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let attention = AttentionParams::init(&mut rng, d, cfg.heads, out_std)?;
            let gated = cfg.variant == Variant::Mppa;
            let periodicity = gated.then(|| PeriodicityParams::init(&mut rng, d, cfg.mlp_hidden));
            let ff = FeedForwardParams {
                w1: Tensor::randn(&mut rng, &[d, cfg.d_ff], 1.0 / (d as f64).sqrt()),
                b1: Tensor::zeros(&[1, cfg.d_ff]),
                w2: Tensor::randn(&mut rng, &[cfg.d_ff, d], out_std),
                b2: Tensor::zeros(&[1, d]),
            };
            blocks.push(BlockParams {
                ln1: LayerNormParams::new(d),
                attention,
                energy: gated.then(EnergyParams::identity),
                periodicity,
                gates: gated.then(|| GateParams::zeros(d)),
                ln2: LayerNormParams::new(d),
                ff,
            });
        }
        Ok(Self {
            token_embedding,
            position_embedding,
            blocks,
            ln_f: LayerNormParams::new(d),
        })
    }

    /// Every parameter tensor with its name, in a fixed canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_mut(&mut |t| out.push(t));
        out
    }

    /// Adds `N(0, std^2)` noise to every scalar, so zero-initialized paths
    /// (output MLP layers, intensities, gates) become active.
    pub fn perturb(&mut self, rng: &mut Rng, std: f64) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v += std * rng.normal();
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        f("token_embedding".into(), &self.token_embedding);
        f("position_embedding".into(), &self.position_embedding);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            f(format!("{p}.ln1.gain"), &b.ln1.gain);
            f(format!("{p}.ln1.bias"), &b.ln1.bias);
            b.attention.visit(&format!("{p}.attention"), f);
            if let Some(e) = &b.energy {
                f(format!("{p}.energy.intensity"), &e.intensity);
            }
            if let Some(pp) = &b.periodicity {
                pp.visit(&format!("{p}.periodicity"), f);
            }
            if let Some(g) = &b.gates {
                for (c, name) in ["g", "e", "p"].iter().enumerate() {
                    f(format!("{p}.gates.w_{name}"), &g.w[c]);
                }
                for (c, name) in ["g", "e", "p"].iter().enumerate() {
                    f(format!("{p}.gates.b_{name}"), &g.b[c]);
                }
            }
            f(format!("{p}.ln2.gain"), &b.ln2.gain);
            f(format!("{p}.ln2.bias"), &b.ln2.bias);
            f(format!("{p}.ff.w1"), &b.ff.w1);
            f(format!("{p}.ff.b1"), &b.ff.b1);
            f(format!("{p}.ff.w2"), &b.ff.w2);
            f(format!("{p}.ff.b2"), &b.ff.b2);
        }
        f("ln_f.gain".into(), &self.ln_f.gain);
        f("ln_f.bias".into(), &self.ln_f.bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor)) {
        f(&mut self.token_embedding);
        f(&mut self.position_embedding);
        for b in &mut self.blocks {
            f(&mut b.ln1.gain);
            f(&mut b.ln1.bias);
            b.attention.visit_mut(f);
            if let Some(e) = &mut b.energy {
                f(&mut e.intensity);
            }
            if let Some(pp) = &mut b.periodicity {
                pp.visit_mut(f);
            }
            if let Some(g) = &mut b.gates {
                g.w.iter_mut().for_each(&mut *f);
                g.b.iter_mut().for_each(&mut *f);
            }
            f(&mut b.ln2.gain);
            f(&mut b.ln2.bias);
            f(&mut b.ff.w1);
            f(&mut b.ff.b1);
            f(&mut b.ff.w2);
            f(&mut b.ff.b2);
        }
        f(&mut self.ln_f.gain);
        f(&mut self.ln_f.bias);
    }

    /// Replaces every tensor, in canonical order, from `values`.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        let slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.into_iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "assign",
                    left: slot.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            *slot = v;
        }
        Ok(())
    }

    /// All parameters concatenated into one vector (canonical order).
    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            let src = flat
                .get(offset..offset + n)
                .ok_or_else(|| Error::InvalidArgument("flat parameter vector too short".into()))?;
            t.data_mut().copy_from_slice(src);
            offset += n;
        }
        if offset != flat.len() {
            return Err(Error::InvalidArgument("flat parameter vector too long".into()));
        }
        Ok(())
    }

    pub fn bind(&self, b: &mut Binder) -> Result<ModelVars> {
        let token_embedding = b.param(&self.token_embedding)?;
        let position_embedding = b.param(&self.position_embedding)?;
        let blocks = self.blocks.iter().map(|blk| blk.bind(b)).collect::<Result<Vec<_>>>()?;
        let ln_f = [b.param(&self.ln_f.gain)?, b.param(&self.ln_f.bias)?];
        Ok(ModelVars {
            token_embedding,
            position_embedding,
            blocks,
            ln_f,
        })
    }
}

pub struct BlockVars {
    pub(crate) ln1: [Var; 2],
    pub(crate) attention: AttentionVars,
    pub(crate) energy: Option<Var>,
    pub(crate) periodicity: Option<PeriodicityVars>,
    pub(crate) gates: Option<([Var; 3], [Var; 3])>,
    pub(crate) ln2: [Var; 2],
    pub(crate) ff: [Var; 4],
}

impl BlockParams {
    pub fn bind(&self, b: &mut Binder) -> Result<BlockVars> {
        let ln1 = [b.param(&self.ln1.gain)?, b.param(&self.ln1.bias)?];
        let attention = self.attention.bind(b)?;
        let energy = self.energy.as_ref().map(|e| b.param(&e.intensity)).transpose()?;
        let periodicity = self.periodicity.as_ref().map(|p| p.bind(b)).transpose()?;
        let gates = match &self.gates {
            Some(g) => Some((
                [b.param(&g.w[0])?, b.param(&g.w[1])?, b.param(&g.w[2])?],
                [b.param(&g.b[0])?, b.param(&g.b[1])?, b.param(&g.b[2])?],
            )),
            None => None,
        };
        let ln2 = [b.param(&self.ln2.gain)?, b.param(&self.ln2.bias)?];
        let ff = [
            b.param(&self.ff.w1)?,
            b.param(&self.ff.b1)?,
            b.param(&self.ff.w2)?,
            b.param(&self.ff.b2)?,
        ];
        Ok(BlockVars {
            ln1,
            attention,
            energy,
            periodicity,
            gates,
            ln2,
            ff,
        })
    }
}

pub struct ModelVars {
    pub(crate) token_embedding: Var,
    pub(crate) position_embedding: Var,
    pub(crate) blocks: Vec<BlockVars>,
    pub(crate) ln_f: [Var; 2],
}
