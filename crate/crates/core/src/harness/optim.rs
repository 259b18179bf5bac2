//! AdamW with linear warmup and cosine decay.

use crate::harness::config::OptimizerConfig;
use crate::numerics::Tensor;

/// Learning rate at 0-based `step`: linear warmup over `warmup_steps`, then
/// cosine decay from `lr` to `lr * min_lr_ratio` at the final step.
pub fn learning_rate(cfg: &OptimizerConfig, step: usize) -> f64 {
    let base = cfg.lr;
    if step < cfg.warmup_steps {
        return base * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let floor = base * cfg.min_lr_ratio;
    let span = cfg.steps.saturating_sub(cfg.warmup_steps).max(1);
    let progress = ((step - cfg.warmup_steps) as f64 / span as f64).min(1.0);
    floor + (base - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Decoupled weight decay applies to matrices only (both dims > 1).
fn decays(t: &Tensor) -> bool {
    t.shape().len() == 2 && t.shape().iter().all(|&d| d > 1)
}

pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: &OptimizerConfig, params: &[&Tensor]) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let decay = if decays(p) { lr * self.weight_decay } else { 0.0 };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= decay * *w;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .fold(0.0, |acc, v| acc + v * v)
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OptimizerConfig {
        OptimizerConfig {
            lr: 1.0,
            steps: 110,
            warmup_steps: 10,
            min_lr_ratio: 0.1,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let c = cfg();
        assert!((learning_rate(&c, 0) - 0.1).abs() < 1e-15);
        assert!((learning_rate(&c, 9) - 1.0).abs() < 1e-15);
        assert!((learning_rate(&c, 10) - 1.0).abs() < 1e-15);
        assert!((learning_rate(&c, 60) - 0.55).abs() < 1e-12);
        assert!((learning_rate(&c, 110) - 0.1).abs() < 1e-12);
        let lrs: Vec<f64> = (10..110).map(|s| learning_rate(&c, s)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut p = Tensor::full(&[2, 2], 0.5);
        let before = p.clone();
        let mut opt = AdamW::new(&cfg(), &[&p]);
        opt.step(vec![&mut p], &[Tensor::full(&[2, 2], 3.0)], 0.0);
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut c = cfg();
        c.weight_decay = 0.0;
        let mut p = Tensor::zeros(&[1, 3]);
        let mut opt = AdamW::new(&c, &[&p]);
        opt.step(
            vec![&mut p],
            &[Tensor::from_rows(&[vec![2.0, -0.5, 0.0]]).unwrap()],
            0.01,
        );
        assert!((p.data()[0] + 0.01).abs() < 1e-9);
        assert!((p.data()[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.data()[2], 0.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
