use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One bidding task (campaign objective).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub name: String,
    /// Mean impression value on day 1 at the curve's mean level.
    pub base_value: f64,
    /// Log-scale standard deviation of impression values.
    pub dispersion: f64,
    /// Daily budget in currency units.
    pub budget: f64,
    /// Mean candidate impressions per step.
    pub base_rate: f64,
    /// Relative amplitude of the diurnal volume curve.
    pub volume_amplitude: f64,
    /// Phase shift of the diurnal curves, in steps.
    pub phase: f64,
    /// Relative amplitude of the diurnal value curve.
    pub value_amplitude: f64,
    /// Signed drift directions (multiplied by the drift magnitude).
    pub value_drift: f64,
    pub volume_drift: f64,
    pub price_drift: f64,
}

/// Market-price model: lognormal around `price_ratio * value_mean`,
/// log-correlated with the impression value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketSpec {
    pub price_ratio: f64,
    pub price_dispersion: f64,
    pub correlation: f64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        Self {
            price_ratio: 0.6,
            price_dispersion: 0.5,
            correlation: 0.5,
        }
    }
}

/// Diurnal curve shape: fundamental period plus an optional harmonic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeriodicSpec {
    pub fundamental: usize,
    pub harmonic: Option<usize>,
    /// Harmonic amplitude relative to the fundamental.
    pub harmonic_amplitude: f64,
}

impl Default for PeriodicSpec {
    fn default() -> Self {
        Self {
            fundamental: 96,
            harmonic: Some(8),
            harmonic_amplitude: 0.3,
        }
    }
}

/// Day-level multiplicative shift: `exp(magnitude * direction * (day - 1) + jitter * eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftSpec {
    pub magnitude: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            magnitude: 0.05,
            jitter: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub steps_per_day: usize,
    pub tasks: Vec<TaskProfile>,
    pub market: MarketSpec,
    pub periodic: PeriodicSpec,
    pub drift: DriftSpec,
    /// Discount used only by the discounted-return metric.
    pub discount: f64,
}

impl Default for EnvConfig {
    /// Three tasks: high-value/low-volume store conversion, mid-value direct
    /// conversion, and low-value/high-volume add-to-cart.
    fn default() -> Self {
        Self {
            steps_per_day: 96,
            tasks: vec![
                TaskProfile {
                    name: "store_conversion".into(),
                    base_value: 5.0,
                    dispersion: 0.6,
                    budget: 400.0,
                    base_rate: 4.0,
                    volume_amplitude: 0.5,
                    phase: 0.0,
                    value_amplitude: 0.2,
                    value_drift: 1.0,
                    volume_drift: -0.5,
                    price_drift: 1.5,
                },
                TaskProfile {
                    name: "direct_conversion".into(),
                    base_value: 2.0,
                    dispersion: 0.5,
                    budget: 350.0,
                    base_rate: 8.0,
                    volume_amplitude: 0.5,
                    phase: 8.0,
                    value_amplitude: 0.2,
                    value_drift: -0.5,
                    volume_drift: 0.5,
                    price_drift: 0.5,
                },
                TaskProfile {
                    name: "add_to_cart".into(),
                    base_value: 0.2,
                    dispersion: 0.4,
                    budget: 90.0,
                    base_rate: 20.0,
                    volume_amplitude: 0.5,
                    phase: 4.0,
                    value_amplitude: 0.1,
                    value_drift: 0.5,
                    volume_drift: 1.0,
                    price_drift: -0.5,
                },
            ],
            market: MarketSpec::default(),
            periodic: PeriodicSpec::default(),
            drift: DriftSpec::default(),
            discount: 1.0,
        }
    }
}

/// Which distribution parameter a day multiplier applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    Value = 0,
    Volume = 1,
    Price = 2,
}

impl EnvConfig {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_day == 0 {
            return Err(Error::Config("steps_per_day must be >= 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task required".into()));
        }
        for t in &self.tasks {
            if !(t.budget > 0.0) {
                return Err(Error::Config(format!(
                    "task {}: budget must be > 0",
                    t.name
                )));
            }
            if !(t.dispersion > 0.0) {
                return Err(Error::Config(format!(
                    "task {}: dispersion must be > 0",
                    t.name
                )));
            }
            if !(t.base_value > 0.0) || !(t.base_rate >= 0.0) {
                return Err(Error::Config(format!(
                    "task {}: base value/rate invalid",
                    t.name
                )));
            }
            let swing = t.volume_amplitude * (1.0 + self.periodic.harmonic_amplitude);
            if !(0.0..1.0).contains(&swing) || !(0.0..1.0).contains(&t.value_amplitude) {
                return Err(Error::Config(format!(
                    "task {}: curve amplitudes must keep rates positive",
                    t.name
                )));
            }
        }
        if !(self.market.price_dispersion > 0.0) || !(self.market.price_ratio > 0.0) {
            return Err(Error::Config(
                "market price parameters must be positive".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&self.market.correlation) {
            return Err(Error::Config(
                "price/value correlation must lie in [-1, 1]".into(),
            ));
        }
        if self.periodic.fundamental == 0 || self.periodic.harmonic == Some(0) {
            return Err(Error::Config("curve periods must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config("discount must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn wave(&self, task: usize, t: usize) -> (f64, f64) {
        let p = &self.periodic;
        let phase = t as f64 - self.tasks[task].phase;
        let fundamental = (2.0 * PI * phase / p.fundamental as f64).cos();
        let harmonic = p.harmonic.map_or(0.0, |h| {
            p.harmonic_amplitude * (2.0 * PI * t as f64 / h as f64).cos()
        });
        (fundamental, harmonic)
    }

    /// Expected impressions at step `t` before the day multiplier.
    pub fn volume_curve(&self, task: usize, t: usize) -> f64 {
        let tp = &self.tasks[task];
        let (f, h) = self.wave(task, t);
        tp.base_rate * (1.0 + tp.volume_amplitude * (f + h))
    }

    /// Mean impression value at step `t` before the day multiplier.
    pub fn value_curve(&self, task: usize, t: usize) -> f64 {
        let tp = &self.tasks[task];
        let (f, _) = self.wave(task, t);
        tp.base_value * (1.0 + tp.value_amplitude * f)
    }

    pub fn drift_direction(&self, task: usize, kind: DriftKind) -> f64 {
        let tp = &self.tasks[task];
        match kind {
            DriftKind::Value => tp.value_drift,
            DriftKind::Volume => tp.volume_drift,
            DriftKind::Price => tp.price_drift,
        }
    }

    /// Deterministic part of the day multiplier (jitter excluded).
    pub fn trend_factor(&self, task: usize, day: usize, kind: DriftKind) -> f64 {
        (self.drift.magnitude * self.drift_direction(task, kind) * (day as f64 - 1.0)).exp()
    }

    /// Expected impressions at step `t` of `day`, ignoring jitter.
    pub fn expected_volume(&self, task: usize, day: usize, t: usize) -> f64 {
        self.volume_curve(task, t) * self.trend_factor(task, day, DriftKind::Volume)
    }

    /// Expected mean impression value at step `t` of `day`, ignoring jitter.
    pub fn expected_value(&self, task: usize, day: usize, t: usize) -> f64 {
        self.value_curve(task, t) * self.trend_factor(task, day, DriftKind::Value)
    }

    /// FNV-1a hash of the canonical JSON form, for dataset manifests.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
