//! Baseline weighters: Dynamic Weight Average and PCGrad.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{softmax, GradientBundle};
use crate::error::{Error, Result};
use crate::numeric::ParamVector;

/// DWA weights from per-task loss histories (oldest first).
///
/// Uses the ratio of the last two recorded losses per task,
/// `w = softmax(r / T)`. Weights are normalized to sum to one rather than to
/// K, so every strategy shares the same step-size semantics. Any task with
/// fewer than two recorded losses puts the whole vector in warm-up (uniform).
pub fn dwa_weights(history: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    let k = history.len();
    if k == 0 {
        return Err(Error::TaskCount {
            expected: 1,
            got: 0,
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "DWA temperature must be > 0, got {temperature}"
        )));
    }
    if let Some(&bad) = history.iter().flatten().find(|&&l| !(l > 0.0)) {
        return Err(Error::NonPositiveLoss(bad));
    }
    if history.iter().any(|h| h.len() < 2) {
        return Ok(vec![1.0 / k as f64; k]);
    }
    let ratios: Vec<f64> = history
        .iter()
        .map(|h| h[h.len() - 1] / h[h.len() - 2])
        .collect();
    Ok(softmax(&ratios, temperature))
}

/// PCGrad surgery. For each task gradient, the other tasks are visited in a
/// seeded random order; whenever the running gradient conflicts with another
/// task's original gradient (negative inner product), the conflicting
/// component is projected out. Zero-norm gradients are never projected onto.
pub fn pcgrad_project(bundle: &GradientBundle, seed: u64) -> Vec<ParamVector> {
    let grads = bundle.train_grads();
    let k = grads.len();
    let norms: Vec<f64> = grads.iter().map(ParamVector::norm_sq).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut g = grads[i].clone();
        let mut order: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        order.shuffle(&mut rng);
        for j in order {
            if norms[j] == 0.0 {
                continue;
            }
            let d = g.dot(&grads[j]).expect("bundle layouts agree");
            if d < 0.0 {
                g.axpy(-d / norms[j], &grads[j])
                    .expect("bundle layouts agree");
            }
        }
        out.push(g);
    }
    out
}

/// Mean of the PCGrad-projected task gradients. With one task this is the
/// task gradient itself.
pub fn pcgrad_combine(bundle: &GradientBundle, seed: u64) -> ParamVector {
    let projected = pcgrad_project(bundle, seed);
    let k = projected.len() as f64;
    let mut d = ParamVector::zeros(bundle.val_grad().layout().clone());
    for g in &projected {
        d.axpy(1.0 / k, g).expect("bundle layouts agree");
    }
    d
}
