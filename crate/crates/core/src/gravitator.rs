//! Multi-head causal self-attention.

use crate::error::{Error, Result};
use crate::numerics::{Binder, Graph, Rng, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// `[heads * d_k, d]`.
    pub w_o: Tensor,
}

impl AttentionParams {
    pub fn init(rng: &mut Rng, d: usize, heads: usize, out_std: f64) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("d={d} is not divisible by heads={heads}")));
        }
        let d_k = d / heads;
        let std = 1.0 / (d as f64).sqrt();
        let heads = (0..heads)
            .map(|_| HeadParams {
                w_q: Tensor::randn(rng, &[d, d_k], std),
                w_k: Tensor::randn(rng, &[d, d_k], std),
                w_v: Tensor::randn(rng, &[d, d_k], std),
            })
            .collect();
        Ok(Self {
            heads,
            w_o: Tensor::randn(rng, &[d, d], out_std),
        })
    }

    pub fn d_k(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w_q.cols())
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, h) in self.heads.iter().enumerate() {
            f(format!("{prefix}.head{i}.w_q"), &h.w_q);
            f(format!("{prefix}.head{i}.w_k"), &h.w_k);
            f(format!("{prefix}.head{i}.w_v"), &h.w_v);
        }
        f(format!("{prefix}.w_o"), &self.w_o);
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor)) {
        for h in &mut self.heads {
            f(&mut h.w_q);
            f(&mut h.w_k);
            f(&mut h.w_v);
        }
        f(&mut self.w_o);
    }

    pub fn bind(&self, b: &mut Binder) -> Result<AttentionVars> {
        let mut heads = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            heads.push([b.param(&h.w_q)?, b.param(&h.w_k)?, b.param(&h.w_v)?]);
        }
        Ok(AttentionVars {
            heads,
            w_o: b.param(&self.w_o)?,
            d_k: self.d_k(),
        })
    }
}

pub struct AttentionVars {
    heads: Vec<[Var; 3]>,
    w_o: Var,
    d_k: usize,
}

/// Lower-triangular admissibility: position `i` may attend to `j` iff `j <= i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CausalMask {
    n: usize,
}

pub fn build_causal_mask(n: usize) -> Result<CausalMask> {
    if n == 0 {
        return Err(Error::InvalidArgument("causal mask needs n >= 1".into()));
    }
    Ok(CausalMask { n })
}

impl CausalMask {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn admits(&self, i: usize, j: usize) -> bool {
        j <= i && i < self.n
    }

    pub fn admissible_pairs(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// Additive mask: `0` where admissible, `-inf` elsewhere.
    pub fn to_tensor(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n, self.n]);
        for i in 0..self.n {
            for j in i + 1..self.n {
                t.set(i, j, f64::NEG_INFINITY);
            }
        }
        t
    }
}

fn head_scores(g: &mut Graph, h: Var, w: &[Var; 3], d_k: usize) -> Result<(Var, Var)> {
    let q = g.matmul(h, w[0])?;
    let k = g.matmul(h, w[1])?;
    let v = g.matmul(h, w[2])?;
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (d_k as f64).sqrt())?;
    let a = g.causal_softmax(s)?;
    Ok((a, v))
}

/// `concat_h(softmax(Q_h K_h^T / sqrt(d_k) + M) V_h) W_O` on the graph.
pub fn attention_graph(g: &mut Graph, h: Var, p: &AttentionVars) -> Result<Var> {
    let mut outs = Vec::with_capacity(p.heads.len());
    for w in &p.heads {
        let (a, v) = head_scores(g, h, w, p.d_k)?;
        outs.push(g.matmul(a, v)?);
    }
    let z = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    g.matmul(z, p.w_o)
}

pub fn causal_attention(h: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let hv = g.leaf(h.clone())?;
    let vars = p.bind(&mut Binder::new(&mut g))?;
    let z = attention_graph(&mut g, hv, &vars)?;
    Ok(g.value(z).clone())
}

/// Per-head attention weight matrices `A_h` (rows are convex weights).
pub fn attention_weights(h: &Tensor, p: &AttentionParams) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let hv = g.leaf(h.clone())?;
    let vars = p.bind(&mut Binder::new(&mut g))?;
    let mut out = Vec::new();
    for w in &vars.heads {
        let (a, _) = head_scores(&mut g, hv, w, vars.d_k)?;
        out.push(g.value(a).clone());
    }
    Ok(out)
}
