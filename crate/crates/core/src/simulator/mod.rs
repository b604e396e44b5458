//! Synthetic budgeted-auction environment.
//!
//! Each day, every task sees a stream of impression opportunities per step.
//! Volumes follow a diurnal curve (fundamental period plus a harmonic) and
//! values/prices follow lognormal laws whose means drift multiplicatively
//! from day to day. A bidder chooses a bid-scaling factor `a` per step and
//! bids `a * v` on every opportunity; it wins when the bid beats the market
//! price and the price still fits the remaining budget, pays the market
//! price, and collects the impression value.

mod config;
mod io;

pub use config::{DriftKind, DriftSpec, EnvConfig, MarketSpec, PeriodicSpec, TaskProfile};
pub use io::{read_trajectories, write_trajectories, DatasetManifest, TRAJECTORY_SCHEMA};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Steps of history behind the spend-rate / win-rate / value statistics.
pub const TRAILING_STEPS: usize = 4;

/// SplitMix64-style combination of seed components.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Opportunity {
    pub value: f64,
    pub price: f64,
}

/// Per-step market summary for one task: candidate count, mean value, mean price.
pub type MarketObs = [f64; 3];

/// One simulated day of opportunities, indexed `[task][step]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionDay {
    pub day: usize,
    pub opportunities: Vec<Vec<Vec<Opportunity>>>,
}

impl AuctionDay {
    pub fn steps(&self, task: usize) -> &[Vec<Opportunity>] {
        &self.opportunities[task]
    }

    /// Market summaries for `task`, one per step.
    pub fn observables(&self, task: usize) -> Vec<MarketObs> {
        self.opportunities[task]
            .iter()
            .map(|opps| {
                let n = opps.len() as f64;
                if opps.is_empty() {
                    [0.0, 0.0, 0.0]
                } else {
                    let v: f64 = opps.iter().map(|o| o.value).sum();
                    let p: f64 = opps.iter().map(|o| o.price).sum();
                    [n, v / n, p / n]
                }
            })
            .collect()
    }

    pub fn total_value(&self, task: usize) -> f64 {
        self.opportunities[task]
            .iter()
            .flatten()
            .map(|o| o.value)
            .sum()
    }
}

/// Full day multiplier including seeded jitter.
pub fn day_factor(cfg: &EnvConfig, task: usize, day: usize, kind: DriftKind) -> f64 {
    let trend = cfg.trend_factor(task, day, kind);
    if cfg.drift.jitter == 0.0 {
        return trend;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        cfg.drift.seed,
        task as u64,
        day as u64,
        kind as u64,
    ]));
    let eps: f64 = StandardNormal.sample(&mut rng);
    trend * (cfg.drift.jitter * eps).exp()
}

/// Draws one day. Day 0 is allowed and serves as market history for day 1.
pub fn generate_day(cfg: &EnvConfig, day: usize, seed: u64) -> AuctionDay {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, day as u64]));
    let sv_p = cfg.market.price_dispersion;
    let rho = cfg.market.correlation;
    let rho_c = (1.0 - rho * rho).max(0.0).sqrt();
    let opportunities = (0..cfg.num_tasks())
        .map(|task| {
            let sv = cfg.tasks[task].dispersion;
            let vol_f = day_factor(cfg, task, day, DriftKind::Volume);
            let val_f = day_factor(cfg, task, day, DriftKind::Value);
            let price_f = day_factor(cfg, task, day, DriftKind::Price);
            (0..cfg.steps_per_day)
                .map(|t| {
                    let rate = cfg.volume_curve(task, t) * vol_f;
                    let count = if rate > 0.0 {
                        let d = Poisson::new(rate).expect("positive Poisson rate");
                        let c: f64 = d.sample(&mut rng);
                        c as usize
                    } else {
                        0
                    };
                    let value_mean = cfg.value_curve(task, t) * val_f;
                    let price_mean = cfg.market.price_ratio * value_mean * price_f;
                    (0..count)
                        .map(|_| {
                            let z1: f64 = StandardNormal.sample(&mut rng);
                            let z2: f64 = StandardNormal.sample(&mut rng);
                            let value = value_mean * (sv * z1 - 0.5 * sv * sv).exp();
                            let price = price_mean
                                * (sv_p * (rho * z1 + rho_c * z2) - 0.5 * sv_p * sv_p).exp();
                            Opportunity { value, price }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    AuctionDay { day, opportunities }
}

/// Outcome of one step, kept for trailing statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub cost: f64,
    pub wins: usize,
    pub seen: usize,
    pub value_seen: f64,
}

/// Bidder state at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidState {
    pub step: usize,
    pub budget_left: f64,
    pub time_left_frac: f64,
    /// Mean spend per step over the trailing window.
    pub spend_rate: f64,
    /// Wins / candidates over the trailing window.
    pub recent_win_rate: f64,
    /// Mean candidate value over the trailing window.
    pub recent_avg_value: f64,
    #[serde(skip)]
    pub trailing: [StepOutcome; TRAILING_STEPS],
}

impl BidState {
    pub fn initial(budget: f64) -> Self {
        Self {
            step: 0,
            budget_left: budget,
            time_left_frac: 1.0,
            spend_rate: 0.0,
            recent_win_rate: 0.0,
            recent_avg_value: 0.0,
            trailing: [StepOutcome::default(); TRAILING_STEPS],
        }
    }
}

/// Runs one step. Opportunities are processed in order; each is won when
/// `action * value > price` and `budget_left >= price`.
pub fn step(
    cfg: &EnvConfig,
    state: &BidState,
    action: f64,
    opportunities: &[Opportunity],
) -> Result<(BidState, f64, f64)> {
    if !(action >= 0.0) || !action.is_finite() {
        return Err(Error::InvalidBidScale(action));
    }
    let mut budget = state.budget_left;
    let mut reward = 0.0;
    let mut cost = 0.0;
    let mut wins = 0;
    for o in opportunities {
        if action * o.value > o.price && budget >= o.price {
            budget -= o.price;
            cost += o.price;
            reward += o.value;
            wins += 1;
        }
    }
    let outcome = StepOutcome {
        cost,
        wins,
        seen: opportunities.len(),
        value_seen: opportunities.iter().map(|o| o.value).sum(),
    };
    let mut trailing = state.trailing;
    trailing.rotate_left(1);
    trailing[TRAILING_STEPS - 1] = outcome;

    let next_step = state.step + 1;
    let window = next_step.min(TRAILING_STEPS);
    let recent = &trailing[TRAILING_STEPS - window..];
    let spent: f64 = recent.iter().map(|o| o.cost).sum();
    let seen: usize = recent.iter().map(|o| o.seen).sum();
    let won: usize = recent.iter().map(|o| o.wins).sum();
    let value_seen: f64 = recent.iter().map(|o| o.value_seen).sum();
    let t = cfg.steps_per_day as f64;
    let next = BidState {
        step: next_step,
        budget_left: budget.max(0.0),
        time_left_frac: (t - next_step as f64) / t,
        spend_rate: spent / window as f64,
        recent_win_rate: if seen > 0 {
            won as f64 / seen as f64
        } else {
            0.0
        },
        recent_avg_value: if seen > 0 {
            value_seen / seen as f64
        } else {
            0.0
        },
        trailing,
    };
    Ok((next, reward, cost))
}

/// What a policy sees before acting.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub task: usize,
    pub day: usize,
    pub step: usize,
    /// Episode states so far; the last one is the current state.
    pub states: &'a [BidState],
    /// Market summaries for the previous day followed by today's steps
    /// strictly before `step`.
    pub market: &'a [MarketObs],
}

impl Observation<'_> {
    pub fn current(&self) -> &BidState {
        self.states
            .last()
            .expect("observation carries the current state")
    }
}

/// A bidding policy producing a bid-scaling factor.
pub trait Policy {
    fn act(&mut self, obs: &Observation<'_>) -> f64;
}

impl<F: FnMut(&Observation<'_>) -> f64> Policy for F {
    fn act(&mut self, obs: &Observation<'_>) -> f64 {
        self(obs)
    }
}

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: BidState,
    pub action: f64,
    pub reward: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: usize,
    pub day: usize,
    pub steps: Vec<StepRecord>,
    /// Episode return divided by the task's reference return.
    pub quality: f64,
}

impl Trajectory {
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn discounted_return(&self, discount: f64) -> f64 {
        let mut g = 0.0;
        for s in self.steps.iter().rev() {
            g = s.reward + discount * g;
        }
        g
    }
}

/// Rolls `policy` through a pre-drawn day. `previous` supplies the market
/// history preceding the day.
pub fn rollout_on<P: Policy + ?Sized>(
    cfg: &EnvConfig,
    policy: &mut P,
    task: usize,
    today: &AuctionDay,
    previous: &AuctionDay,
    reference_return: f64,
) -> Result<Trajectory> {
    if task >= cfg.num_tasks() {
        return Err(Error::UnknownTask(task));
    }
    let mut market = previous.observables(task);
    let today_obs = today.observables(task);
    let mut states = vec![BidState::initial(cfg.tasks[task].budget)];
    let mut steps = Vec::with_capacity(cfg.steps_per_day);
    for t in 0..cfg.steps_per_day {
        let obs = Observation {
            task,
            day: today.day,
            step: t,
            states: &states,
            market: &market,
        };
        let action = policy.act(&obs);
        if !action.is_finite() {
            return Err(Error::NonFiniteAction(t));
        }
        let state = *obs.current();
        let (next, reward, cost) = step(cfg, &state, action, &today.steps(task)[t])?;
        steps.push(StepRecord {
            state,
            action,
            reward,
            cost,
        });
        states.push(next);
        market.push(today_obs[t]);
    }
    let mut traj = Trajectory {
        task,
        day: today.day,
        steps,
        quality: 0.0,
    };
    traj.quality = if reference_return > 0.0 {
        traj.total_return() / reference_return
    } else {
        0.0
    };
    Ok(traj)
}

/// Generates `day` (and `day - 1` for history) from `seed` and rolls the policy.
pub fn rollout<P: Policy + ?Sized>(
    cfg: &EnvConfig,
    policy: &mut P,
    task: usize,
    day: usize,
    seed: u64,
    reference_return: f64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if day == 0 {
        return Err(Error::Config(
            "episodes start at day 1; day 0 is history only".into(),
        ));
    }
    let previous = generate_day(cfg, day - 1, seed);
    let today = generate_day(cfg, day, seed);
    rollout_on(cfg, policy, task, &today, &previous, reference_return)
}

/// Budget-pacing behavior policy with lognormal action noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorSpec {
    /// Bid scale when spend is exactly on pace.
    pub base_action: f64,
    /// Strength of the pacing correction.
    pub pacing_gain: f64,
    /// Log-sd of the per-episode aggressiveness multiplier.
    pub noise: f64,
    /// Log-sd of the per-step multiplier.
    pub step_noise: f64,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        Self {
            base_action: 1.0,
            pacing_gain: 3.0,
            noise: 0.35,
            step_noise: 0.1,
        }
    }
}

/// Proportional pacer: pushes the bid scale up when spend lags the uniform
/// schedule and down when it runs ahead.
#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    spec: BehaviorSpec,
    budget: f64,
    episode_scale: f64,
    rng: ChaCha8Rng,
}

impl BehaviorPolicy {
    pub fn new(spec: BehaviorSpec, budget: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let episode_scale = (spec.noise * eps - 0.5 * spec.noise * spec.noise).exp();
        Self {
            spec,
            budget,
            episode_scale,
            rng,
        }
    }

    pub fn episode_scale(&self) -> f64 {
        self.episode_scale
    }
}

impl Policy for BehaviorPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> f64 {
        let s = obs.current();
        let elapsed = 1.0 - s.time_left_frac;
        let spent = 1.0 - s.budget_left / self.budget;
        let pace = (self.spec.pacing_gain * (elapsed - spent)).exp();
        let sn = self.spec.step_noise;
        let step_mult = if sn > 0.0 {
            let eps: f64 = StandardNormal.sample(&mut self.rng);
            (sn * eps - 0.5 * sn * sn).exp()
        } else {
            1.0
        };
        self.spec.base_action * pace * self.episode_scale * step_mult
    }
}

/// How many logged days and trajectories to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub days: usize,
    /// Trajectories per task, spread round-robin over the days.
    pub counts: Vec<usize>,
    pub behavior: BehaviorSpec,
    pub seed: u64,
    /// Days `1..=reference_days` define each task's reference return.
    pub reference_days: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            days: 10,
            counts: vec![20, 20, 10],
            behavior: BehaviorSpec::default(),
            seed: 0,
            reference_days: 8,
        }
    }
}

/// Trajectories plus the per-task reference returns used for `quality`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub trajectories: Vec<Trajectory>,
    pub reference_returns: Vec<f64>,
}

/// Day label of trajectory `index` of a task when `count` trajectories are
/// spread over `days` days.
pub fn schedule_day(index: usize, days: usize) -> usize {
    1 + index % days
}

/// Logs behavior-policy trajectories. One auction day is drawn per day and
/// shared by all trajectories of that day; trajectories differ only through
/// behavior noise. Output is ordered by (day, task, replicate).
pub fn generate_dataset(cfg: &EnvConfig, spec: &DatasetSpec) -> Result<GeneratedDataset> {
    cfg.validate()?;
    if spec.days == 0 {
        return Err(Error::Config("dataset needs at least one day".into()));
    }
    if spec.counts.len() != cfg.num_tasks() {
        return Err(Error::TaskCount {
            expected: cfg.num_tasks(),
            got: spec.counts.len(),
        });
    }
    if spec.counts.contains(&0) {
        return Err(Error::Config(
            "every task needs at least one trajectory".into(),
        ));
    }
    let days: Vec<AuctionDay> = (0..=spec.days)
        .map(|d| generate_day(cfg, d, spec.seed))
        .collect();
    let mut trajectories = Vec::new();
    for day in 1..=spec.days {
        for (task, &count) in spec.counts.iter().enumerate() {
            for rep in (0..count).filter(|&i| schedule_day(i, spec.days) == day) {
                let mut policy = BehaviorPolicy::new(
                    spec.behavior.clone(),
                    cfg.tasks[task].budget,
                    mix_seed(&[spec.seed, 0xB3, task as u64, day as u64, rep as u64]),
                );
                trajectories.push(rollout_on(
                    cfg,
                    &mut policy,
                    task,
                    &days[day],
                    &days[day - 1],
                    0.0,
                )?);
            }
        }
    }
    let reference_returns: Vec<f64> = (0..cfg.num_tasks())
        .map(|task| {
            let returns: Vec<f64> = trajectories
                .iter()
                .filter(|t| t.task == task && t.day <= spec.reference_days.max(1))
                .map(Trajectory::total_return)
                .collect();
            let mean = if returns.is_empty() {
                0.0
            } else {
                returns.iter().sum::<f64>() / returns.len() as f64
            };
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        })
        .collect();
    for t in &mut trajectories {
        t.quality = t.total_return() / reference_returns[t.task];
    }
    Ok(GeneratedDataset {
        trajectories,
        reference_returns,
    })
}

/// Market summaries per task for days `0..=days`, indexed `[day][task]`.
pub fn market_tapes(cfg: &EnvConfig, days: usize, seed: u64) -> Vec<Vec<Vec<MarketObs>>> {
    (0..=days)
        .map(|d| {
            let day = generate_day(cfg, d, seed);
            (0..cfg.num_tasks()).map(|k| day.observables(k)).collect()
        })
        .collect()
}
