//! Central finite differences, used as an independent check on backprop.

use super::model::{Example, SharedBottomModel};
use super::param::ParamVector;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F>(x: &[f64], step: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::NonPositiveStep(step));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe)?;
        probe[i] = orig - step;
        let minus = f(&probe)?;
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Finite-difference estimate of the batch-MSE gradient for `task`.
pub fn fd_gradient(
    model: &SharedBottomModel,
    task: usize,
    batch: &[Example],
    step: f64,
) -> Result<ParamVector> {
    let mut probe = model.clone();
    let layout = model.layout().clone();
    let g = central_difference(model.params().values(), step, |theta| {
        probe.params_mut().values_mut().copy_from_slice(theta);
        probe.loss(task, batch)
    })?;
    ParamVector::from_values(layout, g)
}

/// Largest relative error between two gradients; entries where both are
/// below `abs_floor` in magnitude are compared absolutely.
pub fn max_relative_error(a: &[f64], b: &[f64], abs_floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let scale = x.abs().max(y.abs());
            if scale < abs_floor {
                (x - y).abs()
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Activation, Matrix, ModelConfig, Window};

    #[test]
    fn quadratic_derivative() {
        let g = central_difference(&[3.0], 1e-5, |w| Ok(w[0] * w[0])).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive_step() {
        assert_eq!(
            central_difference(&[1.0], 0.0, |_| Ok(0.0)).unwrap_err(),
            Error::NonPositiveStep(0.0)
        );
        assert!(central_difference(&[1.0], -1.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn constant_loss_has_vanishing_estimate() {
        // Zero-weight linear head: prediction is the bias alone, so the loss
        // does not depend on the encoder or on the head's input weights.
        let cfg = ModelConfig {
            window: 2,
            state_dim: 2,
            period_dim: 0,
            encoder_widths: vec![3],
            head_widths: vec![],
            tasks: 1,
            activation: Activation::Tanh,
        };
        let mut m = SharedBottomModel::init(cfg, 4).unwrap();
        for v in m.params_mut().tensor_mut("head.0.out.weight").unwrap() {
            *v = 0.0;
        }
        let ex = Example {
            window: Window::states_only(Matrix::filled(2, 2, 0.4)),
            quality: 0.2,
            target: m.params().tensor("head.0.out.bias").unwrap()[0],
        };
        let g = fd_gradient(&m, 0, &[ex], 1e-5).unwrap();
        assert!(g.values().iter().all(|v| v.abs() < 1e-8));
    }
}
