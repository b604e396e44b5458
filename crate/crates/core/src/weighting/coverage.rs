//! Empirical alignment-coverage constants for a gradient bundle.

use serde::{Deserialize, Serialize};

use super::{marginal_gains, GradientBundle};
use crate::error::{Error, Result};
use crate::numeric::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    /// `max_k m_k / ||g_val||^2`: the best alignment ratio over the simplex.
    pub gamma_hat: f64,
    /// Estimate of `min_w ||sum_k w_k g_k|| / ||g_val||`.
    pub m_hat: f64,
}

/// Best alignment ratio only; cheap enough to log every iteration.
pub fn gamma_hat(bundle: &GradientBundle) -> Result<f64> {
    let vn = bundle.val_grad().norm_sq();
    if !(vn > 0.0) {
        return Err(Error::DegenerateValidation);
    }
    let gains = marginal_gains(bundle)?;
    let best = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(best / vn)
}

/// Both coverage constants. A non-positive `gamma_hat` means the coverage
/// assumption fails for this bundle; that is reported, not treated as an error.
pub fn alignment_stats(bundle: &GradientBundle) -> Result<AlignmentStats> {
    let gamma_hat = gamma_hat(bundle)?;
    let gram = gram_matrix(bundle);
    let k = bundle.num_tasks();
    let min_sq = match k {
        1 => gram[0][0],
        2..=4 => grid_min_quadratic(&gram, 100),
        _ => pgd_min_quadratic(&gram, 500),
    };
    Ok(AlignmentStats {
        gamma_hat,
        m_hat: min_sq.max(0.0).sqrt() / bundle.val_grad().norm(),
    })
}

fn gram_matrix(bundle: &GradientBundle) -> Vec<Vec<f64>> {
    let g = bundle.train_grads();
    (0..g.len())
        .map(|i| {
            (0..g.len())
                .map(|j| dot(g[i].values(), g[j].values()))
                .collect()
        })
        .collect()
}

fn quad(gram: &[Vec<f64>], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, row) in gram.iter().enumerate() {
        for (j, g) in row.iter().enumerate() {
            s += w[i] * g * w[j];
        }
    }
    s
}

/// Minimum of `w' G w` over the simplex lattice with spacing `1/n`.
fn grid_min_quadratic(gram: &[Vec<f64>], n: usize) -> f64 {
    let k = gram.len();
    let mut best = f64::INFINITY;
    let mut counts = vec![0usize; k];
    // Enumerate compositions of n into k parts.
    fn rec(
        pos: usize,
        left: usize,
        n: usize,
        counts: &mut Vec<usize>,
        gram: &[Vec<f64>],
        best: &mut f64,
    ) {
        let k = counts.len();
        if pos == k - 1 {
            counts[pos] = left;
            let w: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
            *best = best.min(quad(gram, &w));
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            rec(pos + 1, left - c, n, counts, gram, best);
        }
    }
    rec(0, n, n, &mut counts, gram, &mut best);
    best
}

/// Projected gradient descent on `w' G w` over the simplex.
fn pgd_min_quadratic(gram: &[Vec<f64>], iterations: usize) -> f64 {
    let k = gram.len();
    let trace: f64 = (0..k).map(|i| gram[i][i]).sum();
    if trace <= 0.0 {
        return 0.0;
    }
    // The gradient 2Gw is Lipschitz with constant 2 lambda_max(G) <= 2 tr(G).
    let step = 1.0 / (2.0 * trace);
    let mut w = vec![1.0 / k as f64; k];
    let mut best = quad(gram, &w);
    for _ in 0..iterations {
        let grad: Vec<f64> = gram.iter().map(|row| 2.0 * dot(row, &w)).collect();
        let moved: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        w = project_to_simplex(&moved);
        best = best.min(quad(gram, &w));
    }
    best
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}
