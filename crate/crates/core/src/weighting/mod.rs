//! Validation-aligned task weighting.
//!
//! Each task's marginal gain is the inner product between its training
//! gradient and the validation gradient: to first order, a step along task
//! `k` lowers the validation loss by `eta * m_k`. Maximizing the expected
//! gain `sum_k w_k m_k` over the simplex picks a single task; adding an
//! entropy bonus `lambda * H(w)` makes the problem strictly concave with the
//! closed-form maximizer `w = softmax(m / lambda)`.
//!
//! This module also carries the baselines (uniform, DWA, PCGrad), the
//! alignment-coverage estimates, and brute-force oracles for the simplex
//! problem.

mod baselines;
mod coverage;
mod oracle;
mod trace;

pub use baselines::{dwa_weights, pcgrad_combine, pcgrad_project};
pub use coverage::{alignment_stats, gamma_hat, project_to_simplex, AlignmentStats};
pub use oracle::simplex_grid_oracle;
pub use trace::WeightRecord;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ParamVector;

/// Tolerance used when checking that a weight vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// K per-task training gradients and one validation gradient over a shared layout.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    train_grads: Vec<ParamVector>,
    val_grad: ParamVector,
    iteration: usize,
}

impl GradientBundle {
    pub fn new(
        train_grads: Vec<ParamVector>,
        val_grad: ParamVector,
        iteration: usize,
    ) -> Result<Self> {
        if train_grads.is_empty() {
            return Err(Error::TaskCount {
                expected: 1,
                got: 0,
            });
        }
        for (k, g) in train_grads.iter().enumerate() {
            if !g.same_layout(&val_grad) {
                return Err(Error::Layout(format!(
                    "training gradient {k} does not share the validation layout"
                )));
            }
        }
        Ok(Self {
            train_grads,
            val_grad,
            iteration,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.train_grads.len()
    }

    pub fn train_grads(&self) -> &[ParamVector] {
        &self.train_grads
    }

    pub fn val_grad(&self) -> &ParamVector {
        &self.val_grad
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Same training gradients, validation target replaced by their sum.
    /// This is the alignment target of the "w/o held-out validation" ablation.
    pub fn with_train_sum_target(&self) -> Self {
        let mut total = ParamVector::zeros(self.val_grad.layout().clone());
        for g in &self.train_grads {
            total.axpy(1.0, g).expect("bundle layouts agree");
        }
        Self {
            train_grads: self.train_grads.clone(),
            val_grad: total,
            iteration: self.iteration,
        }
    }
}

/// Softmax temperature; `HardMax` is the `lambda = 0` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Temperature {
    Soft(f64),
    HardMax,
}

impl Temperature {
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda < 0.0 {
            Err(Error::Config(format!(
                "temperature must be >= 0, got {lambda}"
            )))
        } else if lambda == 0.0 {
            Ok(Temperature::HardMax)
        } else {
            Ok(Temperature::Soft(lambda))
        }
    }

    pub fn lambda(self) -> f64 {
        match self {
            Temperature::Soft(l) => l,
            Temperature::HardMax => 0.0,
        }
    }
}

/// A point on the simplex together with the gains that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub weights: Vec<f64>,
    pub gains: Vec<f64>,
    pub temperature: Temperature,
}

impl TaskWeights {
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
            gains: vec![0.0; k],
            temperature: Temperature::Soft(f64::INFINITY),
        }
    }

    /// Arbitrary simplex point, e.g. from a baseline weighter.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        check_simplex(&weights)?;
        let k = weights.len();
        Ok(Self {
            weights,
            gains: vec![0.0; k],
            temperature: Temperature::Soft(f64::INFINITY),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `m_k = <g_val, g_k>` for every task.
pub fn marginal_gains(bundle: &GradientBundle) -> Result<Vec<f64>> {
    bundle
        .train_grads
        .iter()
        .map(|g| bundle.val_grad.dot(g))
        .collect()
}

/// Index of the largest gain, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `x / lambda`.
pub fn softmax(x: &[f64], lambda: f64) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = x.iter().map(|&v| ((v - max) / lambda).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Closed-form maximizer of `sum w m + lambda H(w)` over the simplex.
///
/// `lambda = 0` returns the one-hot vertex at the first largest gain.
pub fn vamo_weights(gains: &[f64], lambda: f64) -> Result<TaskWeights> {
    if gains.is_empty() {
        return Err(Error::TaskCount {
            expected: 1,
            got: 0,
        });
    }
    if let Some(k) = gains.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGain(k));
    }
    let temperature = Temperature::from_lambda(lambda)?;
    let weights = match temperature {
        Temperature::HardMax => {
            let mut w = vec![0.0; gains.len()];
            w[argmax(gains)] = 1.0;
            w
        }
        Temperature::Soft(l) => softmax(gains, l),
    };
    Ok(TaskWeights {
        weights,
        gains: gains.to_vec(),
        temperature,
    })
}

pub(crate) fn check_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::OffSimplex("empty weight vector".into()));
    }
    if let Some(v) = w.iter().find(|v| !(**v >= -SIMPLEX_TOL)) {
        return Err(Error::OffSimplex(format!("negative entry {v}")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::OffSimplex(format!("entries sum to {s}")));
    }
    Ok(())
}

/// Shannon entropy with `0 log 0 = 0`.
pub fn entropy(w: &[f64]) -> f64 {
    -w.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `sum_k w_k m_k + lambda H(w)`.
pub fn entropy_objective(w: &[f64], gains: &[f64], lambda: f64) -> Result<f64> {
    if w.len() != gains.len() {
        return Err(Error::TaskCount {
            expected: gains.len(),
            got: w.len(),
        });
    }
    check_simplex(w)?;
    let linear: f64 = w.iter().zip(gains).map(|(a, b)| a * b).sum();
    Ok(linear + lambda * entropy(w))
}

/// `d = sum_k w_k g_k`, accumulated in task order.
pub fn combine(bundle: &GradientBundle, w: &TaskWeights) -> Result<ParamVector> {
    combine_weights(bundle, &w.weights)
}

pub(crate) fn combine_weights(bundle: &GradientBundle, w: &[f64]) -> Result<ParamVector> {
    if w.len() != bundle.num_tasks() {
        return Err(Error::TaskCount {
            expected: bundle.num_tasks(),
            got: w.len(),
        });
    }
    let mut d = ParamVector::zeros(bundle.val_grad.layout().clone());
    for (wk, g) in w.iter().zip(&bundle.train_grads) {
        d.axpy(*wk, g)?;
    }
    Ok(d)
}

/// Outcome of checking the maximal-alignment guarantee on one bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentCertificate {
    /// `<g_val, d>` for the softmax-weighted direction.
    pub lhs: f64,
    /// `max_k m_k - lambda log K`.
    pub rhs: f64,
    pub holds: bool,
}

/// Checks `<g_val, d> >= max_k m_k - lambda log K` for `d` built from softmax weights.
pub fn alignment_certificate(bundle: &GradientBundle, lambda: f64) -> Result<AlignmentCertificate> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    let gains = marginal_gains(bundle)?;
    let w = vamo_weights(&gains, lambda)?;
    let d = combine(bundle, &w)?;
    let lhs = bundle.val_grad.dot(&d)?;
    let best = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rhs = best - lambda * (gains.len() as f64).ln();
    Ok(AlignmentCertificate {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-9,
    })
}

/// The three sides of `max <= lambda LSE(x / lambda) <= max + lambda log K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LseSandwich {
    pub max: f64,
    pub lse: f64,
    pub upper: f64,
}

impl LseSandwich {
    pub fn holds(&self) -> bool {
        self.max <= self.lse && self.lse <= self.upper
    }
}

pub fn lse_sandwich(x: &[f64], lambda: f64) -> Result<LseSandwich> {
    if x.is_empty() {
        return Err(Error::TaskCount {
            expected: 1,
            got: 0,
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = x.iter().map(|&v| ((v - max) / lambda).exp()).sum();
    Ok(LseSandwich {
        max,
        lse: max + lambda * sum.ln(),
        upper: max + lambda * (x.len() as f64).ln(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, LN_2};

    fn bundle(val: &[f64], grads: &[&[f64]]) -> GradientBundle {
        let v = ParamVector::flat(val.to_vec());
        let layout = v.layout().clone();
        let gs = grads
            .iter()
            .map(|g| ParamVector::from_values(layout.clone(), g.to_vec()).unwrap())
            .collect();
        GradientBundle::new(gs, v, 0).unwrap()
    }

    #[test]
    fn gains_unit_and_orthogonal() {
        assert_eq!(
            marginal_gains(&bundle(&[1.0, 0.0], &[&[1.0, 0.0]])).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            marginal_gains(&bundle(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]])).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            marginal_gains(&bundle(&[0.0, 1.0], &[&[3.0, 0.0], &[-2.0, 0.0]])).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn layout_mismatch_rejected() {
        let v = ParamVector::flat(vec![1.0, 0.0]);
        let g = ParamVector::flat(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            GradientBundle::new(vec![g], v, 0),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn closed_form_examples() {
        let w = vamo_weights(&[0.3, 0.3, 0.3], 0.7).unwrap();
        for v in &w.weights {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = vamo_weights(&[LN_2, 0.0], 1.0).unwrap();
        assert!((w.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.weights[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hard_max_breaks_ties_low() {
        let w = vamo_weights(&[0.5, 2.0, 2.0], 0.0).unwrap();
        assert_eq!(w.weights, vec![0.0, 1.0, 0.0]);
        assert_eq!(w.temperature, Temperature::HardMax);
    }

    #[test]
    fn non_finite_gain_rejected() {
        assert_eq!(
            vamo_weights(&[0.0, f64::NAN], 1.0).unwrap_err(),
            Error::NonFiniteGain(1)
        );
        assert_eq!(
            vamo_weights(&[f64::INFINITY], 1.0).unwrap_err(),
            Error::NonFiniteGain(0)
        );
        assert!(vamo_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn extreme_gains_do_not_overflow() {
        let w = vamo_weights(&[1e6, 0.0], 1e-3).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn entropy_objective_examples() {
        let v = entropy_objective(&[0.5, 0.5], &[0.0, 0.0], 1.0).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        let v = entropy_objective(&[0.0, 1.0, 0.0], &[4.0, -1.5, 9.0], 3.0).unwrap();
        assert_eq!(v, -1.5);
        assert!(matches!(
            entropy_objective(&[0.6, 0.6], &[0.0, 0.0], 1.0),
            Err(Error::OffSimplex(_))
        ));
        assert!(matches!(
            entropy_objective(&[1.1, -0.1], &[0.0, 0.0], 1.0),
            Err(Error::OffSimplex(_))
        ));
    }

    #[test]
    fn combine_examples() {
        let b = bundle(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let w = TaskWeights::from_weights(vec![0.25, 0.75]).unwrap();
        assert_eq!(combine(&b, &w).unwrap().values(), &[0.25, 0.75]);

        let b = bundle(&[0.0, 0.0], &[&[1.5, -2.0], &[0.5, 4.0]]);
        let vertex = TaskWeights::from_weights(vec![0.0, 1.0]).unwrap();
        assert_eq!(combine(&b, &vertex).unwrap().values(), &[0.5, 4.0]);
        let mean = combine(&b, &TaskWeights::uniform(2)).unwrap();
        assert_eq!(mean.values(), &[1.0, 1.0]);

        let three = TaskWeights::uniform(3);
        assert!(matches!(combine(&b, &three), Err(Error::TaskCount { .. })));
    }

    #[test]
    fn certificate_worked_example() {
        let b = bundle(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = alignment_certificate(&b, 1.0).unwrap();
        assert!((c.lhs - E / (E + 1.0)).abs() < 1e-15);
        assert!((c.rhs - (1.0 - LN_2)).abs() < 1e-15);
        assert!(c.holds);
    }

    #[test]
    fn certificate_identical_gradients() {
        let g: &[f64] = &[0.3, -1.2, 2.0];
        let b = bundle(&[1.0, 1.0, 0.5], &[g, g, g]);
        let m1 = marginal_gains(&b).unwrap()[0];
        let c = alignment_certificate(&b, 0.5).unwrap();
        assert!((c.lhs - m1).abs() < 1e-12);
        assert!(c.holds);
    }

    #[test]
    fn sandwich_examples() {
        let s = lse_sandwich(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.max, 0.0);
        assert!((s.lse - LN_2).abs() < 1e-15);
        assert!((s.upper - LN_2).abs() < 1e-15);
        let s = lse_sandwich(&[-3.25], 0.1).unwrap();
        assert_eq!((s.max, s.lse, s.upper), (-3.25, -3.25, -3.25));
    }

    #[test]
    fn train_sum_target() {
        let b = bundle(&[9.0, 9.0], &[&[1.0, 0.0], &[0.0, 2.0]]).with_train_sum_target();
        assert_eq!(b.val_grad().values(), &[1.0, 2.0]);
        assert_eq!(marginal_gains(&b).unwrap(), vec![1.0, 4.0]);
    }

    proptest! {
        #[test]
        fn weights_stay_on_simplex(
            gains in proptest::collection::vec(-50.0f64..50.0, 1..9),
            lambda in prop_oneof![Just(0.0), 1e-4f64..1e4],
        ) {
            let w = vamo_weights(&gains, lambda).unwrap();
            let s: f64 = w.weights.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(w.weights.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn shift_invariance(
            gains in proptest::collection::vec(-5.0f64..5.0, 1..9),
            c in -100.0f64..100.0,
            lambda in 0.05f64..20.0,
        ) {
            let a = vamo_weights(&gains, lambda).unwrap();
            let shifted: Vec<f64> = gains.iter().map(|g| g + c).collect();
            let b = vamo_weights(&shifted, lambda).unwrap();
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn hard_max_invariant_to_validation_scale(
            val in proptest::collection::vec(-3.0f64..3.0, 4),
            g1 in proptest::collection::vec(-3.0f64..3.0, 4),
            g2 in proptest::collection::vec(-3.0f64..3.0, 4),
            c in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = val.iter().map(|v| v * c).collect();
            let a = marginal_gains(&bundle(&val, &[&g1, &g2])).unwrap();
            let b = marginal_gains(&bundle(&scaled, &[&g1, &g2])).unwrap();
            prop_assert_eq!(
                vamo_weights(&a, 0.0).unwrap().weights,
                vamo_weights(&b, 0.0).unwrap().weights
            );
        }

        #[test]
        fn sandwich_always_holds(
            x in proptest::collection::vec(-1e3f64..1e3, 1..12),
            lambda in 1e-3f64..1e3,
        ) {
            prop_assert!(lse_sandwich(&x, lambda).unwrap().holds());
        }
    }
}
