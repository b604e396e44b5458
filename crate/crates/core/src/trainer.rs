//! The weighted multi-task training loop and its diagnostics.
//!
//! Each iteration draws a training and a validation batch, takes one
//! gradient per task on that task's sub-batch plus one validation gradient,
//! turns them into task weights according to the strategy, and applies
//! `theta <- theta - eta * sum_k w_k g_k`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Sampler, SplitDataset, SplitKind};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::numeric::{Layout, ModelConfig, ParamVector, SharedBottomModel};
use crate::simulator::mix_seed;
use crate::weighting::{
    combine, dwa_weights, gamma_hat, marginal_gains, pcgrad_combine, vamo_weights, GradientBundle,
    TaskWeights, WeightRecord,
};

/// A K-task objective with a separate validation loss.
///
/// `prepare` fixes the batches for one iteration; every other method then
/// evaluates on those batches.
pub trait MultiTaskObjective: Sync {
    fn num_tasks(&self) -> usize;
    fn layout(&self) -> Arc<Layout>;
    fn prepare(&mut self, iteration: usize) -> Result<()>;
    fn task_loss_grad(&self, params: &ParamVector, task: usize) -> Result<(f64, ParamVector)>;
    /// Validation loss and gradient restricted to one task.
    fn task_val_loss_grad(&self, params: &ParamVector, task: usize) -> Result<(f64, ParamVector)>;

    fn task_val_loss(&self, params: &ParamVector, task: usize) -> Result<f64> {
        Ok(self.task_val_loss_grad(params, task)?.0)
    }

    /// Equal-weight mean of the per-task validation losses.
    fn val_loss_grad(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        let k = self.num_tasks();
        let parts = (0..k)
            .map(|t| self.task_val_loss_grad(params, t))
            .collect::<Result<Vec<_>>>()?;
        let mut g = ParamVector::zeros(self.layout());
        let mut loss = 0.0;
        for (l, gk) in &parts {
            loss += l / k as f64;
            g.axpy(1.0 / k as f64, gk)?;
        }
        Ok((loss, g))
    }

    fn val_loss(&self, params: &ParamVector) -> Result<f64> {
        let k = self.num_tasks();
        let mut loss = 0.0;
        for t in 0..k {
            loss += self.task_val_loss(params, t)? / k as f64;
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Vamo,
    Vanilla,
    Dwa,
    Pcgrad,
    Stl,
    /// Validation target replaced by the summed training gradient.
    VamoNoVal,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vamo => "vamo",
            Strategy::Vanilla => "vanilla",
            Strategy::Dwa => "dwa",
            Strategy::Pcgrad => "pcgrad",
            Strategy::Stl => "stl",
            Strategy::VamoNoVal => "vamo-no-val",
        }
    }

    pub fn needs_lambda(self) -> bool {
        matches!(self, Strategy::Vamo | Strategy::VamoNoVal)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vamo" => Strategy::Vamo,
            "vanilla" => Strategy::Vanilla,
            "dwa" => Strategy::Dwa,
            "pcgrad" => Strategy::Pcgrad,
            "stl" => Strategy::Stl,
            "vamo-no-val" => Strategy::VamoNoVal,
            other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `eta_i = eta0 / (1 + i)^0.6`.
    RobbinsMonro {
        eta0: f64,
    },
}

impl StepSchedule {
    pub fn eta(self, iteration: usize) -> f64 {
        match self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::RobbinsMonro { eta0 } => eta0 / (1.0 + iteration as f64).powf(0.6),
        }
    }

    fn base(self) -> f64 {
        match self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::RobbinsMonro { eta0 } => eta0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub schedule: StepSchedule,
    pub strategy: Strategy,
    /// Softmax temperature; set only for the VAMO strategies.
    pub lambda: Option<f64>,
    /// Total samples per training (and validation) batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Exponential smoothing of the weight vector.
    pub ema_beta: Option<f64>,
    /// Heavy-ball coefficient. Leave unset for the plain update.
    pub momentum: Option<f64>,
    pub dwa_temperature: f64,
    /// Iterations averaged into one DWA loss entry.
    pub dwa_epoch: usize,
    /// Record diagnostics every this many iterations.
    pub diag_every: usize,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            schedule: StepSchedule::Constant { eta: 0.05 },
            strategy: Strategy::Vamo,
            lambda: Some(1.0),
            batch_size: 48,
            seed: 0,
            ema_beta: None,
            momentum: None,
            dwa_temperature: 2.0,
            dwa_epoch: 10,
            diag_every: 1,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, tasks: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        let eta = self.schedule.base();
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::Config(format!("step size must be >= 0, got {eta}")));
        }
        match (self.strategy.needs_lambda(), self.lambda) {
            (true, None) => {
                return Err(Error::Config(format!(
                    "strategy {} requires lambda",
                    self.strategy.name()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "lambda is only used by vamo strategies, not {}",
                    self.strategy.name()
                )))
            }
            (true, Some(l)) if !(l >= 0.0) => {
                return Err(Error::Config(format!("lambda must be >= 0, got {l}")))
            }
            _ => {}
        }
        if self.batch_size < tasks {
            return Err(Error::Config(format!(
                "batch size {} smaller than task count {tasks}",
                self.batch_size
            )));
        }
        if let Some(b) = self.ema_beta {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config("ema_beta must lie in [0, 1)".into()));
            }
        }
        if let Some(m) = self.momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config("momentum must lie in [0, 1)".into()));
            }
        }
        if self.diag_every == 0 || self.dwa_epoch == 0 || self.checkpoint_every == Some(0) {
            return Err(Error::Config("cadences must be >= 1".into()));
        }
        if !(self.dwa_temperature > 0.0) {
            return Err(Error::Config("dwa_temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// One diagnostic record, serialized as a JSON line with fields in this
/// order: `iteration`, `strategy`, `eta`, `train_losses`, `val_loss`,
/// `val_grad_norm_sq`, `weights`, `gains`, `gamma_hat`, `predicted_delta`,
/// `actual_delta`, `max_task_grad_norm`, `val_grad_change_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRecord {
    pub iteration: usize,
    pub strategy: String,
    pub eta: f64,
    pub train_losses: Vec<f64>,
    pub val_loss: f64,
    pub val_grad_norm_sq: f64,
    /// Empty for single-task training.
    pub weights: Vec<f64>,
    pub gains: Vec<f64>,
    pub gamma_hat: Option<f64>,
    /// `-eta <g_val, step>`.
    pub predicted_delta: Option<f64>,
    /// Validation-loss change on the same validation batch.
    pub actual_delta: Option<f64>,
    pub max_task_grad_norm: f64,
    /// `||g_val(theta_i) - g_val(theta_{i-1})|| / ||theta_i - theta_{i-1}||`.
    pub val_grad_change_ratio: Option<f64>,
}

impl DiagRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostic record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn weight_record(&self) -> WeightRecord {
        WeightRecord {
            iteration: self.iteration,
            strategy: self.strategy.clone(),
            gains: self.gains.clone(),
            weights: self.weights.clone(),
            gamma_hat: self.gamma_hat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunDiagnostics {
    pub records: Vec<DiagRecord>,
}

impl RunDiagnostics {
    /// Largest observed validation-gradient Lipschitz ratio.
    pub fn l_hat(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.val_grad_change_ratio)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// Largest observed task-gradient norm.
    pub fn g_hat(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.max_task_grad_norm)
            .fold(0.0, f64::max)
    }

    /// Smallest recorded alignment ratio.
    pub fn gamma_min(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.gamma_hat.unwrap_or(f64::NEG_INFINITY))
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }

    pub fn to_lines(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// One vector for shared training, K for single-task training.
    pub params: Vec<ParamVector>,
    pub diagnostics: RunDiagnostics,
    pub checkpoints: Vec<(usize, Vec<ParamVector>)>,
}

fn finite_or_diverge(i: usize, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::Divergence(i))
    }
}

/// Runs the configured strategy from `init`.
pub fn train<O: MultiTaskObjective>(
    objective: &mut O,
    init: &ParamVector,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let k = objective.num_tasks();
    cfg.validate(k)?;
    if !init.layout().as_ref().eq(objective.layout().as_ref()) {
        return Err(Error::Layout(
            "initial parameters do not match the objective".into(),
        ));
    }
    if cfg.strategy == Strategy::Stl {
        return train_single_task(objective, init, cfg);
    }
    let mut params = init.clone();
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let mut ema: Option<Vec<f64>> = None;
    let mut velocity: Option<ParamVector> = None;
    let mut dwa_history: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut dwa_acc = vec![0.0; k];
    let mut dwa_count = 0;
    let mut prev: Option<(ParamVector, ParamVector)> = None;

    for i in 0..cfg.iterations {
        objective.prepare(i)?;
        let obj = &*objective;
        let parts = (0..k)
            .into_par_iter()
            .map(|t| obj.task_loss_grad(&params, t))
            .collect::<Result<Vec<_>>>()?;
        let (losses, grads): (Vec<f64>, Vec<ParamVector>) = parts.into_iter().unzip();
        let (val_loss, val_grad) = obj.val_loss_grad(&params)?;
        finite_or_diverge(i, losses.iter().copied().chain([val_loss]))?;
        let bundle = GradientBundle::new(grads, val_grad, i)?;
        let eta = cfg.schedule.eta(i);

        let (weights, gains, direction) = match cfg.strategy {
            Strategy::Pcgrad => {
                let gains = marginal_gains(&bundle)?;
                let d = pcgrad_combine(&bundle, mix_seed(&[cfg.seed, 0x9C, i as u64]));
                (TaskWeights::uniform(k).weights, gains, d)
            }
            s => {
                let (w, gains) = match s {
                    Strategy::Vamo => {
                        let gains = marginal_gains(&bundle)?;
                        (
                            vamo_weights(&gains, cfg.lambda.expect("validated"))?.weights,
                            gains,
                        )
                    }
                    Strategy::VamoNoVal => {
                        let gains = marginal_gains(&bundle.with_train_sum_target())?;
                        (
                            vamo_weights(&gains, cfg.lambda.expect("validated"))?.weights,
                            gains,
                        )
                    }
                    Strategy::Dwa => (
                        dwa_weights(&dwa_history, cfg.dwa_temperature)?,
                        marginal_gains(&bundle)?,
                    ),
                    _ => (TaskWeights::uniform(k).weights, marginal_gains(&bundle)?),
                };
                let w = match (cfg.ema_beta, ema.as_ref()) {
                    (Some(b), Some(prev_w)) => prev_w
                        .iter()
                        .zip(&w)
                        .map(|(p, c)| b * p + (1.0 - b) * c)
                        .collect(),
                    _ => w,
                };
                if cfg.ema_beta.is_some() {
                    ema = Some(w.clone());
                }
                let tw = TaskWeights::from_weights(w)?;
                let d = combine(&bundle, &tw)?;
                (tw.weights, gains, d)
            }
        };

        if cfg.strategy == Strategy::Dwa {
            for (a, l) in dwa_acc.iter_mut().zip(&losses) {
                *a += l;
            }
            dwa_count += 1;
            if dwa_count == cfg.dwa_epoch {
                for (h, a) in dwa_history.iter_mut().zip(dwa_acc.iter_mut()) {
                    h.push((*a / dwa_count as f64).max(f64::MIN_POSITIVE));
                    *a = 0.0;
                }
                dwa_count = 0;
            }
        }

        let step = match cfg.momentum {
            Some(mu) => {
                let v = match velocity.take() {
                    Some(mut v) => {
                        v.scale(mu);
                        v.axpy(1.0, &direction)?;
                        v
                    }
                    None => direction.clone(),
                };
                velocity = Some(v.clone());
                v
            }
            None => direction,
        };
        if !step.is_finite() {
            return Err(Error::Divergence(i));
        }
        let predicted = -eta * bundle.val_grad().dot(&step)?;
        let ratio = prev.as_ref().and_then(|(p_theta, p_grad)| {
            let mut dt = params.clone();
            dt.axpy(-1.0, p_theta).ok()?;
            let mut dg = bundle.val_grad().clone();
            dg.axpy(-1.0, p_grad).ok()?;
            let n = dt.norm();
            (n > 0.0).then(|| dg.norm() / n)
        });
        let record_now = i % cfg.diag_every == 0 || i + 1 == cfg.iterations;
        prev = Some((params.clone(), bundle.val_grad().clone()));
        params.axpy(-eta, &step)?;

        if record_now {
            let after = obj.val_loss(&params)?;
            let actual = after - val_loss;
            records.push(DiagRecord {
                iteration: i,
                strategy: cfg.strategy.name().into(),
                eta,
                train_losses: losses,
                val_loss,
                val_grad_norm_sq: bundle.val_grad().norm_sq(),
                weights,
                gains,
                gamma_hat: gamma_hat(&bundle).ok(),
                predicted_delta: Some(predicted),
                actual_delta: after.is_finite().then_some(actual),
                max_task_grad_norm: bundle
                    .train_grads()
                    .iter()
                    .map(ParamVector::norm)
                    .fold(0.0, f64::max),
                val_grad_change_ratio: ratio,
            });
        }
        if cfg.checkpoint_every.is_some_and(|n| (i + 1) % n == 0) {
            checkpoints.push((i + 1, vec![params.clone()]));
        }
    }
    Ok(TrainOutcome {
        params: vec![params],
        diagnostics: RunDiagnostics { records },
        checkpoints,
    })
}

/// K independent models, each updated with weight 1 on its own task and
/// validated on its own task's validation data.
fn train_single_task<O: MultiTaskObjective>(
    objective: &mut O,
    init: &ParamVector,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let k = objective.num_tasks();
    let mut params = vec![init.clone(); k];
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    for i in 0..cfg.iterations {
        objective.prepare(i)?;
        let obj = &*objective;
        let eta = cfg.schedule.eta(i);
        let record_now = i % cfg.diag_every == 0 || i + 1 == cfg.iterations;
        let steps = params
            .par_iter_mut()
            .enumerate()
            .map(|(t, p)| -> Result<_> {
                let (loss, g) = obj.task_loss_grad(p, t)?;
                let (vloss, vg) = obj.task_val_loss_grad(p, t)?;
                let gain = vg.dot(&g)?;
                p.axpy(-eta, &g)?;
                let after = if record_now {
                    Some(obj.task_val_loss(p, t)?)
                } else {
                    None
                };
                Ok((loss, vloss, vg.norm_sq(), gain, g.norm(), after))
            })
            .collect::<Result<Vec<_>>>()?;
        finite_or_diverge(i, steps.iter().flat_map(|s| [s.0, s.1]))?;
        if record_now {
            let kf = k as f64;
            let val_loss = steps.iter().map(|s| s.1).sum::<f64>() / kf;
            let after = steps.iter().map(|s| s.5.unwrap_or(f64::NAN)).sum::<f64>() / kf;
            records.push(DiagRecord {
                iteration: i,
                strategy: Strategy::Stl.name().into(),
                eta,
                train_losses: steps.iter().map(|s| s.0).collect(),
                val_loss,
                val_grad_norm_sq: steps.iter().map(|s| s.2).sum::<f64>() / kf,
                weights: Vec::new(),
                gains: steps.iter().map(|s| s.3).collect(),
                gamma_hat: None,
                predicted_delta: Some(-eta * steps.iter().map(|s| s.3).sum::<f64>() / kf),
                actual_delta: after.is_finite().then_some(after - val_loss),
                max_task_grad_norm: steps.iter().map(|s| s.4).fold(0.0, f64::max),
                val_grad_change_ratio: None,
            });
        }
        if cfg.checkpoint_every.is_some_and(|n| (i + 1) % n == 0) {
            checkpoints.push((i + 1, params.clone()));
        }
    }
    Ok(TrainOutcome {
        params,
        diagnostics: RunDiagnostics { records },
        checkpoints,
    })
}

/// Pearson correlation between predicted and realized validation-loss changes.
pub fn first_order_check(diag: &RunDiagnostics) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = diag
        .records
        .iter()
        .filter_map(|r| Some((r.predicted_delta?, r.actual_delta?)))
        .collect();
    if pairs.len() < 10 {
        return Err(Error::DegenerateCorrelation(format!(
            "need at least 10 records, got {}",
            pairs.len()
        )));
    }
    let constant = |f: fn(&(f64, f64)) -> f64| pairs.iter().all(|p| f(p) == f(&pairs[0]));
    if constant(|p| p.0) || constant(|p| p.1) {
        return Err(Error::DegenerateCorrelation("constant series".into()));
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::DegenerateCorrelation("constant series".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Running-average check of the stationarity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// Bound at the final prefix length.
    pub bound: f64,
    /// Average squared validation-gradient norm over all records.
    pub average: f64,
    /// Whether the average stayed under the bound for every prefix.
    pub holds: bool,
    /// Prefix lengths where the average exceeded the bound.
    pub violations: Vec<usize>,
}

/// Evaluates `(L0 - min L) / (eta gamma I) + lambda log K / gamma + L G^2 eta / (2 gamma)`
/// against the running average of `||g_val||^2` for every prefix `I`, with
/// `min L` the smallest validation loss over the whole run.
pub fn stationarity_envelope(
    diag: &RunDiagnostics,
    l_hat: f64,
    g_hat: f64,
    lambda: f64,
    eta: f64,
    gamma: f64,
) -> Result<Envelope> {
    let recs = &diag.records;
    let first = recs
        .first()
        .ok_or_else(|| Error::Config("no diagnostic records".into()))?;
    let worst = recs
        .iter()
        .map(|r| r.gamma_hat.unwrap_or(f64::NEG_INFINITY))
        .fold(gamma, f64::min);
    if !(worst > 0.0) {
        return Err(Error::CoverageViolated(worst));
    }
    if !(eta > 0.0) {
        return Err(Error::NonPositiveStep(eta));
    }
    let k = first.train_losses.len() as f64;
    let l0 = first.val_loss;
    let floor = lambda * k.ln() / gamma + l_hat * g_hat * g_hat * eta / (2.0 * gamma);
    let min_loss = recs
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut violations = Vec::new();
    let mut bound = 0.0;
    for (i, r) in recs.iter().enumerate() {
        sum += r.val_grad_norm_sq;
        let n = (i + 1) as f64;
        bound = (l0 - min_loss) / (eta * gamma * n) + floor;
        if sum / n > bound {
            violations.push(i + 1);
        }
    }
    Ok(Envelope {
        bound,
        average: sum / recs.len() as f64,
        holds: violations.is_empty(),
        violations,
    })
}

/// Behavior cloning over a split dataset: per-task MSE on the sampled
/// sub-batches, validation on the validation-day split.
pub struct OfflineObjective<'a> {
    config: ModelConfig,
    store: &'a FeatureStore,
    train: Sampler<'a>,
    val: Sampler<'a>,
    seed: u64,
    train_batch: Batch,
    val_batch: Batch,
}

impl<'a> OfflineObjective<'a> {
    pub fn new(
        config: ModelConfig,
        data: &'a SplitDataset,
        store: &'a FeatureStore,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if config.tasks != data.num_tasks() {
            return Err(Error::TaskCount {
                expected: data.num_tasks(),
                got: config.tasks,
            });
        }
        let k = config.tasks;
        Ok(Self {
            config,
            store,
            train: Sampler::new(data, SplitKind::Train, batch_size)?,
            val: Sampler::new(data, SplitKind::Val, batch_size)?,
            seed,
            train_batch: Batch {
                per_task: vec![Vec::new(); k],
            },
            val_batch: Batch {
                per_task: vec![Vec::new(); k],
            },
        })
    }

    fn model(&self, params: &ParamVector) -> Result<SharedBottomModel> {
        SharedBottomModel::with_params(self.config.clone(), params.clone())
    }

    pub fn train_batch(&self) -> &Batch {
        &self.train_batch
    }

    pub fn val_batch(&self) -> &Batch {
        &self.val_batch
    }
}

impl MultiTaskObjective for OfflineObjective<'_> {
    fn num_tasks(&self) -> usize {
        self.config.tasks
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::new(self.config.layout())
    }

    fn prepare(&mut self, iteration: usize) -> Result<()> {
        let it = iteration as u64;
        self.train_batch = self
            .train
            .sample(self.store, mix_seed(&[self.seed, 1, it]))?;
        self.val_batch = self.val.sample(self.store, mix_seed(&[self.seed, 2, it]))?;
        Ok(())
    }

    fn task_loss_grad(&self, params: &ParamVector, task: usize) -> Result<(f64, ParamVector)> {
        self.model(params)?
            .loss_and_grad(task, &self.train_batch.per_task[task])
    }

    fn task_val_loss_grad(&self, params: &ParamVector, task: usize) -> Result<(f64, ParamVector)> {
        self.model(params)?
            .loss_and_grad(task, &self.val_batch.per_task[task])
    }

    fn task_val_loss(&self, params: &ParamVector, task: usize) -> Result<f64> {
        self.model(params)?
            .loss(task, &self.val_batch.per_task[task])
    }
}

/// Deterministic quadratics sharing a minimizer:
/// `L_k = 0.5 (theta - theta*)^T diag(a_k) (theta - theta*)`, validation
/// curvature `a_val`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    pub curvatures: Vec<Vec<f64>>,
    pub val_curvature: Vec<f64>,
    pub optimum: Vec<f64>,
}

fn quad(a: &[f64], x: &[f64], opt: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let g = a
        .iter()
        .zip(x.iter().zip(opt))
        .map(|(ai, (xi, oi))| {
            let e = xi - oi;
            loss += 0.5 * ai * e * e;
            ai * e
        })
        .collect();
    (loss, g)
}

impl QuadraticProblem {
    /// Two aligned tasks in `dim` dimensions; validation curvature is their mean.
    pub fn aligned(dim: usize) -> Self {
        let a1: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64 / dim as f64).collect();
        let a2: Vec<f64> = (0..dim).map(|i| 2.0 - i as f64 / dim as f64).collect();
        let val = a1.iter().zip(&a2).map(|(x, y)| 0.5 * (x + y)).collect();
        Self {
            curvatures: vec![a1, a2],
            val_curvature: val,
            optimum: (0..dim).map(|i| (i as f64 * 0.37).sin()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    /// Largest validation curvature, the smoothness constant of the validation loss.
    pub fn smoothness(&self) -> f64 {
        self.val_curvature.iter().copied().fold(0.0, f64::max)
    }
}

impl MultiTaskObjective for QuadraticProblem {
    fn num_tasks(&self) -> usize {
        self.curvatures.len()
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::new(Layout::flat("theta", self.dim()))
    }

    fn prepare(&mut self, _iteration: usize) -> Result<()> {
        Ok(())
    }

    fn task_loss_grad(&self, params: &ParamVector, task: usize) -> Result<(f64, ParamVector)> {
        let a = self.curvatures.get(task).ok_or(Error::UnknownTask(task))?;
        let (l, g) = quad(a, params.values(), &self.optimum);
        Ok((l, ParamVector::from_values(self.layout(), g)?))
    }

    fn task_val_loss_grad(&self, params: &ParamVector, _task: usize) -> Result<(f64, ParamVector)> {
        let (l, g) = quad(&self.val_curvature, params.values(), &self.optimum);
        Ok((l, ParamVector::from_values(self.layout(), g)?))
    }
}

/// Linear losses `L_k = <c_k, theta>`, validation `<c_val, theta>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    pub slopes: Vec<Vec<f64>>,
    pub val_slope: Vec<f64>,
}

impl MultiTaskObjective for LinearProblem {
    fn num_tasks(&self) -> usize {
        self.slopes.len()
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::new(Layout::flat("theta", self.val_slope.len()))
    }

    fn prepare(&mut self, _iteration: usize) -> Result<()> {
        Ok(())
    }

    fn task_loss_grad(&self, params: &ParamVector, task: usize) -> Result<(f64, ParamVector)> {
        let c = self.slopes.get(task).ok_or(Error::UnknownTask(task))?;
        let l = c.iter().zip(params.values()).map(|(a, b)| a * b).sum();
        Ok((l, ParamVector::from_values(self.layout(), c.clone())?))
    }

    fn task_val_loss_grad(&self, params: &ParamVector, _task: usize) -> Result<(f64, ParamVector)> {
        let l = self
            .val_slope
            .iter()
            .zip(params.values())
            .map(|(a, b)| a * b)
            .sum();
        Ok((
            l,
            ParamVector::from_values(self.layout(), self.val_slope.clone())?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(strategy: Strategy, lambda: Option<f64>, eta: f64, iters: usize) -> TrainConfig {
        TrainConfig {
            iterations: iters,
            schedule: StepSchedule::Constant { eta },
            strategy,
            lambda,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    fn start(p: &QuadraticProblem) -> ParamVector {
        ParamVector::from_values(p.layout(), vec![2.0; p.dim()]).unwrap()
    }

    #[test]
    fn zero_step_leaves_parameters() {
        let mut p = QuadraticProblem::aligned(4);
        let init = start(&p);
        let out = train(&mut p, &init, &cfg(Strategy::Vamo, Some(1.0), 0.0, 1)).unwrap();
        assert_eq!(out.params[0], init);
    }

    #[test]
    fn single_task_vamo_is_gradient_descent() {
        let mut p = QuadraticProblem::aligned(3);
        p.curvatures.truncate(1);
        let init = start(&p);
        let out = train(&mut p, &init, &cfg(Strategy::Vamo, Some(1.0), 0.1, 20)).unwrap();
        assert!(out
            .diagnostics
            .records
            .iter()
            .all(|r| r.weights == vec![1.0]));
        let mut x = init.values().to_vec();
        for _ in 0..20 {
            for ((xi, a), o) in x.iter_mut().zip(&p.curvatures[0]).zip(&p.optimum) {
                *xi -= 0.1 * (a * (*xi - o));
            }
        }
        assert_eq!(out.params[0].values(), x.as_slice());
    }

    #[test]
    fn quadratic_validation_loss_decreases() {
        let mut p = QuadraticProblem::aligned(6);
        let init = start(&p);
        let out = train(&mut p, &init, &cfg(Strategy::Vamo, Some(1.0), 0.05, 100)).unwrap();
        let losses: Vec<f64> = out.diagnostics.records.iter().map(|r| r.val_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn vanilla_matches_infinite_temperature() {
        let mut p = QuadraticProblem::aligned(5);
        p.curvatures.push(vec![0.5; 5]);
        let init = start(&p);
        let a = train(&mut p, &init, &cfg(Strategy::Vanilla, None, 0.05, 50)).unwrap();
        let b = train(&mut p, &init, &cfg(Strategy::Vamo, Some(1e300), 0.05, 50)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn lambda_rules() {
        let mut p = QuadraticProblem::aligned(2);
        let init = start(&p);
        for (s, l) in [
            (Strategy::Vamo, None),
            (Strategy::Vanilla, Some(1.0)),
            (Strategy::Vamo, Some(-1.0)),
        ] {
            assert!(matches!(
                train(&mut p, &init, &cfg(s, l, 0.1, 1)),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = QuadraticProblem::aligned(2);
        let init = start(&p);
        let err = train(&mut p, &init, &cfg(Strategy::Vanilla, None, 1e10, 100)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn linear_loss_first_order_exact() {
        let mut p = LinearProblem {
            slopes: vec![vec![1.0, 0.5, -0.25], vec![0.2, 1.0, 0.0]],
            val_slope: vec![0.5, 0.5, 0.1],
        };
        let init = ParamVector::from_values(p.layout(), vec![0.0; 3]).unwrap();
        let mut c = cfg(Strategy::Vamo, Some(1.0), 0.0, 30);
        c.schedule = StepSchedule::RobbinsMonro { eta0: 0.5 };
        let out = train(&mut p, &init, &c).unwrap();
        let r = first_order_check(&out.diagnostics).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn constant_series_is_degenerate() {
        let mut p = LinearProblem {
            slopes: vec![vec![1.0]],
            val_slope: vec![1.0],
        };
        let init = ParamVector::from_values(p.layout(), vec![0.0]).unwrap();
        let out = train(&mut p, &init, &cfg(Strategy::Vamo, Some(1.0), 0.1, 20)).unwrap();
        assert!(matches!(
            first_order_check(&out.diagnostics),
            Err(Error::DegenerateCorrelation(_))
        ));
    }

    #[test]
    fn orthogonal_tasks_void_the_bound() {
        let mut p = QuadraticProblem {
            curvatures: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            val_curvature: vec![0.0, 1.0],
            optimum: vec![0.0, 0.0],
        };
        let init = ParamVector::from_values(p.layout(), vec![1.0, 1.0]).unwrap();
        let out = train(&mut p, &init, &cfg(Strategy::Vamo, Some(0.0), 0.01, 20)).unwrap();
        assert!(matches!(
            stationarity_envelope(&out.diagnostics, 1.0, 1.0, 0.0, 0.01, 0.5),
            Err(Error::CoverageViolated(_))
        ));
    }

    #[test]
    fn stl_trains_each_task_alone() {
        let mut p = QuadraticProblem::aligned(3);
        let init = start(&p);
        let out = train(&mut p, &init, &cfg(Strategy::Stl, None, 0.1, 10)).unwrap();
        assert_eq!(out.params.len(), 2);
        let mut solo = p.clone();
        solo.curvatures = vec![p.curvatures[1].clone()];
        let one = train(&mut solo, &init, &cfg(Strategy::Vanilla, None, 0.1, 10)).unwrap();
        assert_eq!(out.params[1], one.params[0]);
    }

    #[test]
    fn recorded_weights_on_simplex() {
        for s in [
            Strategy::Vamo,
            Strategy::VamoNoVal,
            Strategy::Dwa,
            Strategy::Pcgrad,
            Strategy::Vanilla,
        ] {
            let mut p = QuadraticProblem::aligned(4);
            p.curvatures.push(vec![3.0, 0.1, 0.1, 0.1]);
            let init = start(&p);
            let mut c = cfg(s, s.needs_lambda().then_some(0.5), 0.02, 40);
            c.dwa_epoch = 3;
            c.ema_beta = (s == Strategy::Vamo).then_some(0.5);
            let out = train(&mut p, &init, &c).unwrap();
            for r in &out.diagnostics.records {
                let total: f64 = r.weights.iter().sum();
                assert!((total - 1.0).abs() < 1e-12 && r.weights.iter().all(|w| *w >= 0.0));
            }
        }
    }

    #[test]
    fn diag_line_round_trip() {
        let mut p = QuadraticProblem::aligned(2);
        let init = start(&p);
        let out = train(&mut p, &init, &cfg(Strategy::Vamo, Some(1.0), 0.1, 3)).unwrap();
        let r = &out.diagnostics.records[2];
        assert!(r
            .to_line()
            .starts_with(r#"{"iteration":2,"strategy":"vamo","eta":0.1,"train_losses":"#));
        assert_eq!(&DiagRecord::from_line(&r.to_line()).unwrap(), r);
    }
}
