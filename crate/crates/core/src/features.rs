//! Model inputs built from bidder states and market history.
//!
//! A state row holds six normalized entries:
//! `[time_left_frac, budget_left / B, spend_rate / (B / T), win_rate,
//! avg_value / base_value, valid]`, where `valid` is 0 on left padding.
//! A periodic row holds the amplitude-weighted pooled statistics of the
//! trailing market history (three channels: count / base_rate,
//! mean value / base_value, mean price / base_value).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Example, Matrix, ModelConfig, Window};
use crate::simulator::{market_tapes, BidState, EnvConfig, MarketObs, Trajectory};
use crate::temporal::{aggregate_stats, decompose, HistoryWindow, MIN_HISTORY, STATS_PER_CHANNEL};

pub const STATE_DIM: usize = 6;
pub const MARKET_CHANNELS: usize = 3;
pub const PERIOD_DIM: usize = STATS_PER_CHANNEL * MARKET_CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub enabled: bool,
    /// Trailing history length H, clamped to the steps per day.
    pub history: usize,
    pub k_top: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            history: 96,
            k_top: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub window: usize,
    pub temporal: TemporalConfig,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            window: 8,
            temporal: TemporalConfig::default(),
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window width must be >= 1".into()));
        }
        if self.temporal.enabled && self.temporal.k_top == 0 {
            return Err(Error::Config("k_top must be >= 1".into()));
        }
        Ok(())
    }

    pub fn history_len(&self, env: &EnvConfig) -> usize {
        self.temporal.history.min(env.steps_per_day)
    }

    /// Model configuration matching these inputs.
    pub fn model_config(&self, tasks: usize) -> ModelConfig {
        ModelConfig {
            window: self.window,
            state_dim: STATE_DIM,
            period_dim: if self.temporal.enabled { PERIOD_DIM } else { 0 },
            tasks,
            ..ModelConfig::default()
        }
    }
}

pub fn state_features(env: &EnvConfig, task: usize, s: &BidState) -> [f64; STATE_DIM] {
    let tp = &env.tasks[task];
    let per_step_budget = tp.budget / env.steps_per_day as f64;
    [
        s.time_left_frac,
        s.budget_left / tp.budget,
        s.spend_rate / per_step_budget,
        s.recent_win_rate,
        s.recent_avg_value / tp.base_value,
        1.0,
    ]
}

/// Pooled periodic statistics of the last `H` market observations.
pub fn periodic_row(
    env: &EnvConfig,
    spec: &FeatureSpec,
    task: usize,
    market: &[MarketObs],
) -> Result<Vec<f64>> {
    let h = spec.history_len(env);
    if h < MIN_HISTORY || market.len() < h {
        return Err(Error::WindowTooShort(market.len().min(h)));
    }
    let tp = &env.tasks[task];
    let rate = if tp.base_rate > 0.0 {
        tp.base_rate
    } else {
        1.0
    };
    let mut data = Vec::with_capacity(h * MARKET_CHANNELS);
    for o in &market[market.len() - h..] {
        data.extend_from_slice(&[o[0] / rate, o[1] / tp.base_value, o[2] / tp.base_value]);
    }
    let window = HistoryWindow::new(Matrix::from_vec(h, MARKET_CHANNELS, data)?, 15)?;
    let decomp = decompose(&window, spec.temporal.k_top)?;
    aggregate_stats(&decomp, &window)
}

/// Stacks the last `W` rows ending at index `t`, left-padding with zeros.
pub fn stack_rows(rows: &[Vec<f64>], t: usize, width: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(width, dim);
    for r in 0..width {
        let offset = width - 1 - r;
        if offset <= t {
            m.row_mut(r).copy_from_slice(&rows[t - offset]);
        }
    }
    m
}

/// Precomputed periodic rows for logged days, keyed by `(task, day)`.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    env: EnvConfig,
    spec: FeatureSpec,
    periodic: BTreeMap<(usize, usize), Vec<Vec<f64>>>,
}

impl FeatureStore {
    /// Regenerates the market tapes of `market_seed` and caches the
    /// periodic rows of every task on `days` (each needs day - 1 as history).
    pub fn build(
        env: &EnvConfig,
        spec: &FeatureSpec,
        market_seed: u64,
        days: &[usize],
    ) -> Result<Self> {
        spec.validate()?;
        env.validate()?;
        let mut periodic = BTreeMap::new();
        if spec.temporal.enabled && !days.is_empty() {
            if days.contains(&0) {
                return Err(Error::Config("logged days start at 1".into()));
            }
            let max_day = *days.iter().max().expect("non-empty");
            let tapes = market_tapes(env, max_day, market_seed);
            let keys: Vec<(usize, usize)> = days
                .iter()
                .flat_map(|&d| (0..env.num_tasks()).map(move |k| (k, d)))
                .collect();
            let rows: Vec<Vec<Vec<f64>>> = keys
                .par_iter()
                .map(|&(k, d)| {
                    let mut market = tapes[d - 1][k].clone();
                    (0..env.steps_per_day)
                        .map(|t| {
                            let r = periodic_row(env, spec, k, &market);
                            market.push(tapes[d][k][t]);
                            r
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            periodic = keys.into_iter().zip(rows).collect();
        }
        Ok(Self {
            env: env.clone(),
            spec: spec.clone(),
            periodic,
        })
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn periodic_rows(&self, task: usize, day: usize) -> Option<&[Vec<f64>]> {
        self.periodic.get(&(task, day)).map(Vec::as_slice)
    }

    /// Window ending at step `t` of a logged trajectory.
    pub fn window(&self, traj: &Trajectory, t: usize) -> Result<Window> {
        if t >= traj.steps.len() {
            return Err(Error::Shape(format!(
                "step {t} beyond trajectory of {}",
                traj.steps.len()
            )));
        }
        let w = self.spec.window;
        let lo = (t + 1).saturating_sub(w);
        let rows: Vec<Vec<f64>> = traj.steps[lo..=t]
            .iter()
            .map(|s| state_features(&self.env, traj.task, &s.state).to_vec())
            .collect();
        let states = stack_rows(&rows, t - lo, w, STATE_DIM);
        let periodic = if self.spec.temporal.enabled {
            let p = self
                .periodic_rows(traj.task, traj.day)
                .ok_or(Error::TaskMissing(traj.task))?;
            Some(stack_rows(&p[lo..=t], t - lo, w, PERIOD_DIM))
        } else {
            None
        };
        Ok(Window { states, periodic })
    }

    pub fn example(&self, traj: &Trajectory, t: usize) -> Result<Example> {
        Ok(Example {
            window: self.window(traj, t)?,
            quality: traj.quality,
            target: traj.steps[t].action,
        })
    }
}
