//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::par::Exec;

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for the listed
/// coordinates.
pub fn central_differences<F>(f: F, x: &[f64], h: f64, coords: &[usize], exec: Exec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    exec.try_map(coords, |&i| {
        let mut probe = x.to_vec();
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { op: "grad_check probe" });
        }
        Ok((plus - minus) / (2.0 * h))
    })
}

/// Maximum relative error between the gradient returned by `loss_fn` and
/// central differences, over every coordinate of `params`.
///
/// `loss_fn` returns the scalar loss and its analytic gradient (shaped like
/// `params`).
pub fn grad_check<F>(loss_fn: F, params: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)> + Sync,
{
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    if analytic.shape() != params.shape() {
        return Err(Error::Shape {
            op: "grad_check",
            left: params.shape().to_vec(),
            right: analytic.shape().to_vec(),
        });
    }
    let shape = params.shape().to_vec();
    let scalar = |x: &[f64]| -> Result<f64> {
        let t = Tensor::new(shape.clone(), x.to_vec())?;
        Ok(loss_fn(&t)?.0)
    };
    let coords: Vec<usize> = (0..params.len()).collect();
    let numeric = central_differences(scalar, params.data(), h, &coords, Exec::default())?;
    Ok(analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::tensor::sigmoid;

    #[test]
    fn quadratic() {
        let p = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let err = grad_check(|p| Ok((p.data().iter().map(|v| v * v).sum(), p.scale(2.0))), &p, 1e-6).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn sigmoid_at_zero_through_graph() {
        let p = Tensor::scalar(0.0);
        let f = |p: &Tensor| {
            let mut g = Graph::new();
            let x = g.leaf(p.clone())?;
            let y = g.sigmoid(x)?;
            let loss = g.value(y).item();
            let mut grads = g.backward(y)?;
            Ok((loss, grads.take_or_zeros(x, p)))
        };
        let (_, grad) = f(&p).unwrap();
        assert_eq!(grad.item(), 0.25);
        assert!(grad_check(f, &p, 1e-6).unwrap() < 1e-8);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn non_finite_probe_is_error() {
        let p = Tensor::scalar(0.0);
        let r = grad_check(|p| Ok((p.item().ln(), Tensor::scalar(1.0))), &p, 1e-6);
        assert!(r.is_err());
    }
}
