//! Periodicity-aware features over a trailing multichannel history.
//!
//! Pipeline: amplitude spectrum (direct DFT, averaged over channels) →
//! dominant periods → period–phase reshape per period → pooling statistics →
//! dense projection, aggregated with softmax-of-amplitude weights.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{affine, Matrix};

/// Pooling statistics emitted per channel by [`pool_stats`].
pub const STATS_PER_CHANNEL: usize = 5;

/// Minimum history length.
pub const MIN_HISTORY: usize = 4;

/// `H x d` history, oldest row first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    samples: Matrix,
    step_minutes: u32,
}

impl HistoryWindow {
    pub fn new(samples: Matrix, step_minutes: u32) -> Result<Self> {
        if samples.rows() < MIN_HISTORY {
            return Err(Error::WindowTooShort(samples.rows()));
        }
        if samples.cols() == 0 {
            return Err(Error::Shape("history needs at least one channel".into()));
        }
        if samples.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("history contains non-finite samples".into()));
        }
        if step_minutes == 0 {
            return Err(Error::Config("step_minutes must be positive".into()));
        }
        Ok(Self {
            samples,
            step_minutes,
        })
    }

    /// Single-channel series with 15-minute steps.
    pub fn from_series(series: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_vec(series.len(), 1, series.to_vec())?, 15)
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.cols()
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }
}

/// `S(f) = |sum_h x_h exp(-2 pi i f h / H)|` for `f = 0..H`, averaged over
/// channels. Entry 0 is the DC term.
pub fn spectrum(window: &HistoryWindow) -> Vec<f64> {
    let h = window.len();
    let d = window.channels();
    // Twiddles indexed by (f * n) mod H keep the phases exact.
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..h)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / h as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    let x = window.samples();
    let mut s = vec![0.0; h];
    for (f, out) in s.iter_mut().enumerate() {
        let mut total = 0.0;
        for c in 0..d {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..h {
                let idx = (f * n) % h;
                let v = x.get(n, c);
                re += v * cos[idx];
                im -= v * sin[idx];
            }
            total += re.hypot(im);
        }
        *out = total / d as f64;
    }
    s
}

/// One selected period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub q: usize,
    pub frequency: usize,
    pub amplitude: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDecomposition {
    pub spectrum: Vec<f64>,
    pub periods: Vec<Period>,
    pub k_top: usize,
}

impl PeriodDecomposition {
    pub fn history_len(&self) -> usize {
        self.spectrum.len()
    }

    pub fn period_set(&self) -> Vec<usize> {
        self.periods.iter().map(|p| p.q).collect()
    }
}

/// Picks the `k_top` strongest non-DC frequencies in `1..=H/2` (ties go to the
/// lower frequency), maps each to `q = floor(H / f)` clamped to `[2, H]`,
/// merges duplicate periods keeping the larger amplitude, and weights them by
/// a softmax over amplitudes. A spectrum with no non-DC energy yields the
/// single period `H`.
pub fn top_periods(spectrum: &[f64], k_top: usize) -> Result<PeriodDecomposition> {
    let h = spectrum.len();
    if h < MIN_HISTORY {
        return Err(Error::WindowTooShort(h));
    }
    if k_top == 0 {
        return Err(Error::Config("k_top must be at least 1".into()));
    }
    let peak = spectrum.iter().copied().fold(0.0, f64::max);
    let floor = 1e-9 * peak.max(1.0);

    let mut candidates: Vec<usize> = (1..=h / 2).filter(|&f| spectrum[f] > floor).collect();
    if candidates.is_empty() {
        return Ok(PeriodDecomposition {
            spectrum: spectrum.to_vec(),
            periods: vec![Period {
                q: h,
                frequency: 0,
                amplitude: 0.0,
                weight: 1.0,
            }],
            k_top,
        });
    }
    candidates.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
    candidates.truncate(k_top);

    let mut periods: Vec<Period> = Vec::new();
    for f in candidates {
        let q = (h / f).clamp(2, h);
        let amplitude = spectrum[f];
        // Candidates arrive in descending amplitude, so the first wins a duplicate.
        if !periods.iter().any(|p| p.q == q) {
            periods.push(Period {
                q,
                frequency: f,
                amplitude,
                weight: 0.0,
            });
        }
    }
    let amps: Vec<f64> = periods.iter().map(|p| p.amplitude).collect();
    let weights = crate::weighting::softmax(&amps, 1.0);
    for (p, w) in periods.iter_mut().zip(weights) {
        p.weight = w;
    }
    Ok(PeriodDecomposition {
        spectrum: spectrum.to_vec(),
        periods,
        k_top,
    })
}

/// Convenience: spectrum then [`top_periods`].
pub fn decompose(window: &HistoryWindow, k_top: usize) -> Result<PeriodDecomposition> {
    top_periods(&spectrum(window), k_top)
}

/// Period–phase tensor `[q x cycles x d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodTensor {
    pub q: usize,
    pub cycles: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl PeriodTensor {
    pub fn at(&self, phase: usize, cycle: usize, channel: usize) -> f64 {
        self.data[(phase * self.cycles + cycle) * self.channels + channel]
    }

    /// One cycle (column) for a channel.
    pub fn column(&self, cycle: usize, channel: usize) -> Vec<f64> {
        (0..self.q).map(|p| self.at(p, cycle, channel)).collect()
    }
}

/// Folds the history at period `q`: drops the oldest `H mod q` samples, then
/// fills column by column so the newest sample lands at the last phase of the
/// last column.
pub fn reshape_period(window: &HistoryWindow, q: usize) -> Result<PeriodTensor> {
    let h = window.len();
    if q < 2 || q > h {
        return Err(Error::PeriodOutOfRange { q, h });
    }
    let cycles = h / q;
    let offset = h % q;
    let d = window.channels();
    let x = window.samples();
    let mut data = vec![0.0; q * cycles * d];
    for cycle in 0..cycles {
        for phase in 0..q {
            let row = offset + cycle * q + phase;
            for c in 0..d {
                data[(phase * cycles + cycle) * d + c] = x.get(row, c);
            }
        }
    }
    Ok(PeriodTensor {
        q,
        cycles,
        channels: d,
        data,
    })
}

/// Per channel: overall mean, overall max, range of the phase profile
/// (row means), last-cycle mean minus first-cycle mean, and the profile value
/// at phase 0 (the phase that follows the newest sample).
pub fn pool_stats(t: &PeriodTensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(STATS_PER_CHANNEL * t.channels);
    for c in 0..t.channels {
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        let mut profile = vec![0.0; t.q];
        for (p, slot) in profile.iter_mut().enumerate() {
            for cy in 0..t.cycles {
                let v = t.at(p, cy, c);
                sum += v;
                if v > max {
                    max = v;
                }
                *slot += v;
            }
            *slot /= t.cycles as f64;
        }
        let mean = sum / (t.q * t.cycles) as f64;
        let (lo, hi) = profile
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let cycle_mean = |cy: usize| (0..t.q).map(|p| t.at(p, cy, c)).sum::<f64>() / t.q as f64;
        let trend = cycle_mean(t.cycles - 1) - cycle_mean(0);
        out.extend_from_slice(&[mean, max, hi - lo, trend, profile[0]]);
    }
    out
}

/// Amplitude-weighted pooled statistics, `sum_q weight_q pool_stats(reshape_q)`.
pub fn aggregate_stats(decomp: &PeriodDecomposition, window: &HistoryWindow) -> Result<Vec<f64>> {
    if decomp.history_len() != window.len() {
        return Err(Error::Shape(format!(
            "decomposition built for H = {}, window has H = {}",
            decomp.history_len(),
            window.len()
        )));
    }
    let mut acc = vec![0.0; STATS_PER_CHANNEL * window.channels()];
    for p in &decomp.periods {
        let stats = pool_stats(&reshape_period(window, p.q)?);
        for (a, s) in acc.iter_mut().zip(stats) {
            *a += p.weight * s;
        }
    }
    Ok(acc)
}

/// Dense map from pooled statistics to the state width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodFeatureMap {
    /// `[out x in]`, row-major.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl PeriodFeatureMap {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `[-1/sqrt(in), 1/sqrt(in)]`, weights row-major then bias.
    pub fn init(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut map = Self::zeros(out_dim, in_dim);
        for v in map.weight.as_mut_slice() {
            *v = rng.random_range(-bound..bound);
        }
        for v in &mut map.bias {
            *v = rng.random_range(-bound..bound);
        }
        map
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "feature map expects {} inputs, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut out = vec![0.0; self.out_dim()];
        affine(self.weight.as_slice(), &self.bias, x, &mut out);
        Ok(out)
    }
}

/// `z = sum_q weight_q (A pool_stats(reshape_q) + b)`.
pub fn period_features(
    decomp: &PeriodDecomposition,
    window: &HistoryWindow,
    map: &PeriodFeatureMap,
) -> Result<Vec<f64>> {
    if map.in_dim() != STATS_PER_CHANNEL * window.channels() {
        return Err(Error::Shape(format!(
            "feature map takes {} inputs, window produces {}",
            map.in_dim(),
            STATS_PER_CHANNEL * window.channels()
        )));
    }
    if decomp.history_len() != window.len() {
        return Err(Error::Shape(
            "decomposition and window lengths differ".into(),
        ));
    }
    let mut z = vec![0.0; map.out_dim()];
    for p in &decomp.periods {
        let y = map.apply(&pool_stats(&reshape_period(window, p.q)?))?;
        for (zi, yi) in z.iter_mut().zip(y) {
            *zi += p.weight * yi;
        }
    }
    Ok(z)
}

/// Gradient of `<upstream, z>` with respect to the map's weight and bias.
/// Pooling has no parameters, so only the dense layer receives gradient.
pub fn period_features_grad(
    decomp: &PeriodDecomposition,
    window: &HistoryWindow,
    map: &PeriodFeatureMap,
    upstream: &[f64],
) -> Result<PeriodFeatureMap> {
    if upstream.len() != map.out_dim() {
        return Err(Error::Shape(
            "upstream gradient width differs from map output".into(),
        ));
    }
    let pooled = aggregate_stats(decomp, window)?;
    if pooled.len() != map.in_dim() {
        return Err(Error::Shape(
            "pooled statistics width differs from map input".into(),
        ));
    }
    let total_weight: f64 = decomp.periods.iter().map(|p| p.weight).sum();
    let mut g = PeriodFeatureMap::zeros(map.out_dim(), map.in_dim());
    for (o, &u) in upstream.iter().enumerate() {
        g.bias[o] = u * total_weight;
        for (gw, &s) in g.weight.row_mut(o).iter_mut().zip(&pooled) {
            *gw = u * s;
        }
    }
    Ok(g)
}

/// Augmented state `s + z`.
pub fn augment_state(s: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if s.len() != z.len() {
        return Err(Error::Shape(format!(
            "state has {} entries, z has {}",
            s.len(),
            z.len()
        )));
    }
    Ok(s.iter().zip(z).map(|(a, b)| a + b).collect())
}
