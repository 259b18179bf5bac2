//! Finite-difference check of every model parameter.

use std::fmt;

use crate::error::Result;
use crate::harness::audit::randomized_model;
use crate::model::{Ablation, Model, ModelConfig};
use crate::numerics::gradcheck::{central_differences, relative_error};
use crate::numerics::Rng;
use crate::par::Exec;

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    /// Flat index of the worst coordinate within the tensor.
    pub worst_index: usize,
    pub worst_error: f64,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.worst_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < GRADCHECK_TOLERANCE
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "loss={} tensors={}", self.loss, self.tensors.len())?;
        for t in &self.tensors {
            writeln!(
                f,
                "{:<36} n={:<6} worst[{}] rel_err={:.3e} analytic={:.6e} numeric={:.6e}",
                t.name, t.len, t.worst_index, t.worst_error, t.analytic, t.numeric
            )?;
        }
        write!(f, "max_rel_err={:.3e}", self.max_error())
    }
}

/// Checks the gradient of the mean next-token loss of `model` on `sequence`
/// against central differences over every scalar parameter.
pub fn check_model_gradients(model: &Model, sequence: &[usize], exec: Exec) -> Result<GradReport> {
    let (loss, analytic) = model.loss_and_grads(sequence)?;
    let x = model.params.flatten();
    let f = |flat: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        m.params.unflatten(flat)?;
        let losses = m.token_losses(sequence, Ablation::none())?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };
    let coords: Vec<usize> = (0..x.len()).collect();
    let numeric = central_differences(f, &x, GRADCHECK_STEP, &coords, exec)?;

    let mut tensors = Vec::new();
    let mut offset = 0;
    for ((name, t), grad) in model.params.named_tensors().into_iter().zip(&analytic) {
        let mut check = TensorCheck {
            name,
            len: t.len(),
            worst_index: 0,
            worst_error: 0.0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (j, &a) in grad.data().iter().enumerate() {
            let n = numeric[offset + j];
            let e = relative_error(a, n);
            if e > check.worst_error || j == 0 {
                (check.worst_index, check.worst_error, check.analytic, check.numeric) = (j, e, a, n);
            }
        }
        offset += t.len();
        tensors.push(check);
    }
    Ok(GradReport { loss, tensors })
}

/// Gradient check of a randomized model built from `cfg` on a random
/// sequence of `n_max + 1` tokens (so the inputs fill `n_max` positions).
pub fn check_gradients(cfg: &ModelConfig, seed: u64, exec: Exec) -> Result<GradReport> {
    let model = randomized_model(cfg, seed)?;
    let mut rng = Rng::stream(seed, 2);
    let sequence: Vec<usize> = (0..=cfg.n_max).map(|_| rng.below(cfg.vocab_size)).collect();
    check_model_gradients(&model, &sequence, exec)
}
