//! Exhaustive simplex grid search, the brute-force check on the closed form.

use rayon::prelude::*;

use super::entropy_objective;
use crate::error::{Error, Result};

/// Best grid point of `sum w m + lambda H(w)` on the simplex lattice with
/// spacing `1/n`, `n = round(1/step)`. Only `2 <= K <= 4`.
///
/// Ties keep the lexicographically smallest lattice index.
pub fn simplex_grid_oracle(gains: &[f64], lambda: f64, step: f64) -> Result<(Vec<f64>, f64)> {
    let k = gains.len();
    if !(2..=4).contains(&k) {
        return Err(Error::OracleTooLarge(k));
    }
    if !(step > 0.0) || step > 1.0 {
        return Err(Error::Config(format!(
            "grid step must be in (0, 1], got {step}"
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = (1.0 / step).round() as usize;

    // table[t][i] = (i/n) m_t - lambda (i/n) ln(i/n)
    let table: Vec<Vec<f64>> = gains
        .iter()
        .map(|&m| {
            (0..=n)
                .map(|i| {
                    let w = i as f64 / n as f64;
                    let h = if i == 0 { 0.0 } else { w * w.ln() };
                    w * m - lambda * h
                })
                .collect()
        })
        .collect();

    let better = |a: (f64, [usize; 3]), b: (f64, [usize; 3])| {
        if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let start = (f64::NEG_INFINITY, [usize::MAX; 3]);

    let (_, idx) = match k {
        2 => (0..=n)
            .map(|i| (table[0][i] + table[1][n - i], [i, 0, 0]))
            .fold(start, better),
        3 => (0..=n)
            .into_par_iter()
            .map(|i| {
                let mut best = start;
                for j in 0..=n - i {
                    let v = table[0][i] + table[1][j] + table[2][n - i - j];
                    best = better(best, (v, [i, j, 0]));
                }
                best
            })
            .reduce(|| start, better),
        _ => {
            // tail[r] = best split of the last two coordinates with r units left
            let (t2, t3) = (&table[2], &table[3]);
            let tail: Vec<(f64, usize)> = (0..=n)
                .into_par_iter()
                .map(|r| {
                    let mut inner = (f64::NEG_INFINITY, 0);
                    for l in 0..=r {
                        let v = t2[l] + t3[r - l];
                        if v > inner.0 {
                            inner = (v, l);
                        }
                    }
                    inner
                })
                .collect();
            (0..=n)
                .into_par_iter()
                .map(|i| {
                    let mut best = start;
                    for j in 0..=n - i {
                        let (v, l) = tail[n - i - j];
                        best = better(best, (table[0][i] + table[1][j] + v, [i, j, l]));
                    }
                    best
                })
                .reduce(|| start, better)
        }
    };

    let mut counts = idx[..k - 1].to_vec();
    counts.push(n - counts.iter().sum::<usize>());
    let w: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let value = entropy_objective(&w, gains, lambda)?;
    Ok((w, value))
}
