//! Test-day metrics, the strategy benchmark and its result files.
//!
//! Result directory layout written by [`BenchmarkResult::write`]:
//!
//! - `metrics.csv`: `strategy,seed,task,return,cost,roi`, one row per run and task
//! - `delta_m.csv`: `strategy,seed,delta_m`, one row per run, then one `mean` row per strategy
//! - `summary.csv`: `strategy,lambda,temporal,delta_m,delta_m_std` followed by
//!   `<task>_return,<task>_cost` for every task
//! - `traces/<strategy>_seed<seed>.jsonl`: weight trace, one JSON record per iteration
//! - `runs/<strategy>_seed<seed>.jsonl`: training diagnostics, one JSON record per line
//! - `split.csv`: `day,split` for the first seed's dataset
//!
//! Floats are written in shortest round-trip form so every mean can be
//! recomputed exactly from the stored per-seed values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{temporal_split, SplitDataset};
use crate::error::{Error, Result};
use crate::features::{
    periodic_row, stack_rows, state_features, FeatureSpec, FeatureStore, PERIOD_DIM, STATE_DIM,
};
use crate::numeric::{Activation, ModelConfig, SharedBottomModel, Window};
use crate::simulator::{
    generate_dataset, mix_seed, rollout, DatasetSpec, EnvConfig, Observation, Policy,
};
use crate::trainer::{train, OfflineObjective, RunDiagnostics, Strategy, TrainConfig};

/// `(1/K) sum_k -(M_method - M_stl) / M_stl * 100`. Negative is better.
pub fn delta_m(stl: &[f64], method: &[f64]) -> Result<f64> {
    if stl.len() != method.len() {
        return Err(Error::TaskCount {
            expected: stl.len(),
            got: method.len(),
        });
    }
    if stl.is_empty() {
        return Err(Error::TaskCount {
            expected: 1,
            got: 0,
        });
    }
    if let Some(k) = stl.iter().position(|&b| b == 0.0 || !b.is_finite()) {
        return Err(Error::UndefinedRelativeDrop(k));
    }
    let k = stl.len() as f64;
    Ok(stl
        .iter()
        .zip(method)
        .map(|(b, m)| -(m - b) / b * 100.0)
        .sum::<f64>()
        / k)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Return and cost of one task across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: usize,
    pub returns: Vec<f64>,
    pub costs: Vec<f64>,
    pub mean_return: f64,
    /// Population standard deviation across runs.
    pub std_return: f64,
    pub mean_cost: f64,
    pub std_cost: f64,
    /// `mean_return / mean_cost`; `None` when nothing was spent.
    pub roi: Option<f64>,
    /// `mean_cost / mean_return`, the cost-per-unit analogue for count-valued tasks.
    pub cost_per_unit: Option<f64>,
}

impl TaskMetrics {
    pub fn from_runs(task: usize, returns: Vec<f64>, costs: Vec<f64>) -> Self {
        let (mean_return, std_return) = mean_std(&returns);
        let (mean_cost, std_cost) = mean_std(&costs);
        Self {
            task,
            roi: (mean_cost > 0.0).then(|| mean_return / mean_cost),
            cost_per_unit: (mean_return > 0.0).then(|| mean_cost / mean_return),
            returns,
            costs,
            mean_return,
            std_return,
            mean_cost,
            std_cost,
        }
    }

    pub fn runs(&self) -> usize {
        self.returns.len()
    }
}

/// Acts with the model's predicted bid scale, conditioned on a fixed quality.
/// Negative predictions are clipped to zero.
pub struct GreedyPolicy<'a> {
    model: &'a SharedBottomModel,
    env: &'a EnvConfig,
    spec: &'a FeatureSpec,
    quality: f64,
    periodic: Vec<Vec<f64>>,
    failure: Option<Error>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(
        model: &'a SharedBottomModel,
        env: &'a EnvConfig,
        spec: &'a FeatureSpec,
        quality: f64,
    ) -> Self {
        Self {
            model,
            env,
            spec,
            quality,
            periodic: Vec::new(),
            failure: None,
        }
    }

    /// First error raised while acting, if any.
    pub fn take_failure(&mut self) -> Option<Error> {
        self.failure.take()
    }

    fn window(&mut self, obs: &Observation<'_>) -> Result<Window> {
        let w = self.spec.window;
        let t = obs.step;
        let lo = (t + 1).saturating_sub(w);
        let rows: Vec<Vec<f64>> = obs.states[lo..=t]
            .iter()
            .map(|s| state_features(self.env, obs.task, s).to_vec())
            .collect();
        let states = stack_rows(&rows, t - lo, w, STATE_DIM);
        let periodic = if self.spec.temporal.enabled {
            if t == 0 {
                self.periodic.clear();
            }
            self.periodic
                .push(periodic_row(self.env, self.spec, obs.task, obs.market)?);
            Some(stack_rows(&self.periodic[lo..=t], t - lo, w, PERIOD_DIM))
        } else {
            None
        };
        Ok(Window { states, periodic })
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, obs: &Observation<'_>) -> f64 {
        let out = self
            .window(obs)
            .and_then(|w| self.model.forward(obs.task, &w, self.quality));
        match out {
            Ok(a) => a.max(0.0),
            Err(e) => {
                self.failure.get_or_insert(e);
                f64::NAN
            }
        }
    }
}

/// Rolls a policy on `day` once per seed and aggregates return and cost.
pub fn evaluate_with<P: Policy>(
    env: &EnvConfig,
    task: usize,
    day: usize,
    seeds: &[u64],
    mut make_policy: impl FnMut(u64) -> P,
) -> Result<TaskMetrics> {
    if task >= env.num_tasks() {
        return Err(Error::UnknownTask(task));
    }
    let mut returns = Vec::with_capacity(seeds.len());
    let mut costs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut policy = make_policy(seed);
        let tr = rollout(env, &mut policy, task, day, seed, 1.0)?;
        returns.push(tr.total_return());
        costs.push(tr.total_cost());
    }
    Ok(TaskMetrics::from_runs(task, returns, costs))
}

/// Greedy evaluation of a trained model on freshly drawn auctions of `day`.
pub fn evaluate_policy(
    model: &SharedBottomModel,
    env: &EnvConfig,
    spec: &FeatureSpec,
    task: usize,
    day: usize,
    seeds: &[u64],
    quality: f64,
) -> Result<TaskMetrics> {
    if task >= model.config().tasks {
        return Err(Error::UnknownTask(task));
    }
    let mut returns = Vec::with_capacity(seeds.len());
    let mut costs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut policy = GreedyPolicy::new(model, env, spec, quality);
        let tr = rollout(env, &mut policy, task, day, seed, 1.0);
        if let Some(e) = policy.take_failure() {
            return Err(e);
        }
        let tr = tr?;
        returns.push(tr.total_return());
        costs.push(tr.total_cost());
    }
    Ok(TaskMetrics::from_runs(task, returns, costs))
}

/// Hidden-layer shape shared by every benchmark model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub encoder_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            encoder_widths: vec![32],
            head_widths: vec![16],
            activation: Activation::Tanh,
        }
    }
}

impl ModelShape {
    pub fn config(&self, spec: &FeatureSpec, tasks: usize) -> ModelConfig {
        ModelConfig {
            encoder_widths: self.encoder_widths.clone(),
            head_widths: self.head_widths.clone(),
            activation: self.activation,
            ..spec.model_config(tasks)
        }
    }
}

/// One benchmark row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    pub strategy: Strategy,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// `false` drops the periodicity features (z = 0).
    #[serde(default = "default_true")]
    pub temporal: bool,
}

fn default_true() -> bool {
    true
}

impl StrategySpec {
    pub fn new(name: &str, strategy: Strategy, lambda: Option<f64>) -> Self {
        Self {
            name: name.into(),
            strategy,
            lambda,
            temporal: true,
        }
    }

    /// VAMO, Vanilla, DWA, PCGrad and the two ablations.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::new("vamo", Strategy::Vamo, Some(1.0)),
            Self::new("vanilla", Strategy::Vanilla, None),
            Self::new("dwa", Strategy::Dwa, None),
            Self::new("pcgrad", Strategy::Pcgrad, None),
            Self::new("vamo-no-val", Strategy::VamoNoVal, Some(1.0)),
            Self {
                temporal: false,
                ..Self::new("vamo-no-temporal", Strategy::Vamo, Some(1.0))
            },
        ]
    }

    /// VAMO rows for each temperature.
    pub fn lambda_sweep(lambdas: &[f64]) -> Vec<Self> {
        lambdas
            .iter()
            .map(|&l| Self::new(&format!("vamo-lambda-{l}"), Strategy::Vamo, Some(l)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub env: EnvConfig,
    pub data: DatasetSpec,
    pub features: FeatureSpec,
    pub model: ModelShape,
    /// Shared training settings; strategy and lambda come from each row.
    pub train: TrainConfig,
    pub strategies: Vec<StrategySpec>,
    pub seeds: Vec<u64>,
    /// Fresh test-day auctions per seed and task.
    pub eval_episodes: usize,
    pub d_val: usize,
    pub d_test: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            data: DatasetSpec::default(),
            features: FeatureSpec::default(),
            model: ModelShape::default(),
            train: TrainConfig {
                iterations: 400,
                lambda: None,
                strategy: Strategy::Vanilla,
                ..TrainConfig::default()
            },
            strategies: StrategySpec::standard_set(),
            seeds: vec![1, 2, 3],
            eval_episodes: 3,
            d_val: 9,
            d_test: 10,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config(
                "benchmark needs at least one strategy".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("benchmark needs at least one seed".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        let mut names: Vec<&str> = self.strategies.iter().map(|s| s.name.as_str()).collect();
        names.push("stl");
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(
                "strategy names must be unique and not 'stl'".into(),
            ));
        }
        if self.d_test > self.data.days {
            return Err(Error::SplitDays(format!(
                "test day {} beyond the {} generated days",
                self.d_test, self.data.days
            )));
        }
        self.env.validate()?;
        self.features.validate()
    }

    fn train_config(&self, strategy: Strategy, lambda: Option<f64>, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy,
            lambda,
            seed: mix_seed(&[seed, 0x7A]),
            ..self.train.clone()
        }
    }

    fn eval_seeds(&self, seed: u64) -> Vec<u64> {
        (0..self.eval_episodes)
            .map(|j| mix_seed(&[seed, 0xE7, j as u64]))
            .collect()
    }
}

/// One trained-and-evaluated (strategy, seed) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub strategy: String,
    pub seed: u64,
    /// Mean test-day return per task over the evaluation episodes.
    pub returns: Vec<f64>,
    pub costs: Vec<f64>,
    /// Against the same seed's STL run; `None` for STL itself.
    pub delta_m: Option<f64>,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub name: String,
    pub lambda: Option<f64>,
    pub temporal: bool,
    pub tasks: Vec<TaskMetrics>,
    /// Mean and population std of the per-seed values.
    pub delta_m: Option<f64>,
    pub delta_m_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub task_names: Vec<String>,
    pub stl: StrategySummary,
    pub strategies: Vec<StrategySummary>,
    /// STL runs first, then strategies in configuration order; seeds ascending within each.
    pub runs: Vec<RunResult>,
    pub split_manifest: String,
}

struct SeedData {
    split: SplitDataset,
    stores: [Option<FeatureStore>; 2],
}

/// Trains a model for `spec` on one seed's data and evaluates every task.
fn run_one(
    cfg: &BenchConfig,
    data: &SeedData,
    seed: u64,
    strategy: Strategy,
    lambda: Option<f64>,
    temporal: bool,
) -> Result<(Vec<f64>, Vec<f64>, RunDiagnostics)> {
    let features = FeatureSpec {
        temporal: crate::features::TemporalConfig {
            enabled: temporal,
            ..cfg.features.temporal.clone()
        },
        ..cfg.features.clone()
    };
    let store = data.stores[usize::from(temporal)]
        .as_ref()
        .expect("store built for every requested temporal setting");
    let k = cfg.env.num_tasks();
    let model_cfg = cfg.model.config(&features, k);
    let init = SharedBottomModel::init(model_cfg.clone(), mix_seed(&[seed, 0x1417]))?;
    let tcfg = cfg.train_config(strategy, lambda, seed);
    let mut objective = OfflineObjective::new(
        model_cfg.clone(),
        &data.split,
        store,
        tcfg.batch_size,
        tcfg.seed,
    )?;
    let outcome = train(&mut objective, init.params(), &tcfg)?;
    let quality = data.split.max_train_quality();
    let eval_seeds = cfg.eval_seeds(seed);
    let mut returns = Vec::with_capacity(k);
    let mut costs = Vec::with_capacity(k);
    for task in 0..k {
        let params = if outcome.params.len() == k {
            outcome.params[task].clone()
        } else {
            outcome.params[0].clone()
        };
        let model = SharedBottomModel::with_params(model_cfg.clone(), params)?;
        let m = evaluate_policy(
            &model,
            &cfg.env,
            &features,
            task,
            cfg.d_test,
            &eval_seeds,
            quality[task],
        )?;
        returns.push(m.mean_return);
        costs.push(m.mean_cost);
    }
    Ok((returns, costs, outcome.diagnostics))
}

/// Trains STL plus every configured strategy on each seed and evaluates
/// them on the test day. Runs execute in parallel; results are assembled
/// in a fixed order, so identical configurations give identical output.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let need_plain = cfg.strategies.iter().any(|s| !s.temporal) || !cfg.features.temporal.enabled;
    let need_temporal = cfg.features.temporal.enabled;
    let logged_days: Vec<usize> = (1..=cfg.data.days).collect();

    let seed_data = seeds
        .par_iter()
        .map(|&seed| -> Result<SeedData> {
            let spec = DatasetSpec {
                seed,
                ..cfg.data.clone()
            };
            let ds = generate_dataset(&cfg.env, &spec)?;
            let split =
                temporal_split(ds.trajectories, cfg.env.num_tasks(), cfg.d_val, cfg.d_test)?;
            let build = |enabled: bool| -> Result<FeatureStore> {
                let f = FeatureSpec {
                    temporal: crate::features::TemporalConfig {
                        enabled,
                        ..cfg.features.temporal.clone()
                    },
                    ..cfg.features.clone()
                };
                FeatureStore::build(&cfg.env, &f, seed, &logged_days)
            };
            let stores = [
                if need_plain {
                    Some(build(false)?)
                } else {
                    None
                },
                if need_temporal {
                    Some(build(true)?)
                } else {
                    None
                },
            ];
            Ok(SeedData { split, stores })
        })
        .collect::<Result<Vec<_>>>()?;

    // Job list: (row index or None for STL, seed index).
    let stl_temporal = cfg.features.temporal.enabled;
    let mut jobs: Vec<(Option<usize>, usize)> = (0..seeds.len()).map(|s| (None, s)).collect();
    for r in 0..cfg.strategies.len() {
        jobs.extend((0..seeds.len()).map(|s| (Some(r), s)));
    }
    let outputs = jobs
        .par_iter()
        .map(|&(row, si)| {
            let seed = seeds[si];
            match row {
                None => run_one(cfg, &seed_data[si], seed, Strategy::Stl, None, stl_temporal),
                Some(r) => {
                    let s = &cfg.strategies[r];
                    let temporal = s.temporal && cfg.features.temporal.enabled;
                    run_one(cfg, &seed_data[si], seed, s.strategy, s.lambda, temporal)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let n = seeds.len();
    let mut runs: Vec<RunResult> = Vec::with_capacity(jobs.len());
    for (&(row, si), (returns, costs, diagnostics)) in jobs.iter().zip(outputs) {
        let (name, dm) = match row {
            None => ("stl".to_string(), None),
            Some(r) => (
                cfg.strategies[r].name.clone(),
                Some(delta_m(&runs[si].returns, &returns)?),
            ),
        };
        runs.push(RunResult {
            strategy: name,
            seed: seeds[si],
            returns,
            costs,
            delta_m: dm,
            diagnostics,
        });
    }

    let summarize = |name: &str, lambda: Option<f64>, temporal: bool, rs: &[RunResult]| {
        let k = cfg.env.num_tasks();
        let tasks = (0..k)
            .map(|t| {
                TaskMetrics::from_runs(
                    t,
                    rs.iter().map(|r| r.returns[t]).collect(),
                    rs.iter().map(|r| r.costs[t]).collect(),
                )
            })
            .collect();
        let dms: Vec<f64> = rs.iter().filter_map(|r| r.delta_m).collect();
        let (dm, dm_std) = if dms.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&dms);
            (Some(m), Some(s))
        };
        StrategySummary {
            name: name.into(),
            lambda,
            temporal,
            tasks,
            delta_m: dm,
            delta_m_std: dm_std,
        }
    };
    let stl = summarize("stl", None, stl_temporal, &runs[..n]);
    let strategies = cfg
        .strategies
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let lo = n * (r + 1);
            summarize(
                &s.name,
                s.lambda,
                s.temporal && cfg.features.temporal.enabled,
                &runs[lo..lo + n],
            )
        })
        .collect();
    Ok(BenchmarkResult {
        task_names: cfg.env.tasks.iter().map(|t| t.name.clone()).collect(),
        stl,
        strategies,
        runs,
        split_manifest: seed_data[0].split.manifest(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl BenchmarkResult {
    pub fn strategy(&self, name: &str) -> Option<&StrategySummary> {
        if name == "stl" {
            return Some(&self.stl);
        }
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn runs_of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a RunResult> + 'a {
        self.runs.iter().filter(move |r| r.strategy == name)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("strategy,seed,task,return,cost,roi\n");
        for r in &self.runs {
            for (t, (ret, cost)) in r.returns.iter().zip(&r.costs).enumerate() {
                let roi = (*cost > 0.0).then(|| ret / cost);
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.strategy,
                    r.seed,
                    self.task_names[t],
                    ret,
                    cost,
                    opt(roi)
                )
                .expect("string write");
            }
        }
        out
    }

    pub fn delta_m_csv(&self) -> String {
        let mut out = String::from("strategy,seed,delta_m\n");
        for s in &self.strategies {
            for r in self.runs_of(&s.name) {
                writeln!(out, "{},{},{}", r.strategy, r.seed, opt(r.delta_m))
                    .expect("string write");
            }
            writeln!(out, "{},mean,{}", s.name, opt(s.delta_m)).expect("string write");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("strategy,lambda,temporal,delta_m,delta_m_std");
        for name in &self.task_names {
            write!(out, ",{name}_return,{name}_cost").expect("string write");
        }
        out.push('\n');
        for s in std::iter::once(&self.stl).chain(&self.strategies) {
            write!(
                out,
                "{},{},{},{},{}",
                s.name,
                opt(s.lambda),
                s.temporal,
                opt(s.delta_m),
                opt(s.delta_m_std)
            )
            .expect("string write");
            for t in &s.tasks {
                write!(out, ",{},{}", t.mean_return, t.mean_cost).expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Writes the result directory. Refuses to overwrite existing results
    /// unless `overwrite` is set.
    pub fn write(&self, dir: &Path, overwrite: bool) -> Result<()> {
        if dir.join("summary.csv").exists() && !overwrite {
            return Err(Error::Config(format!(
                "output path {} already holds results",
                dir.display()
            )));
        }
        if dir.exists() && !dir.is_dir() {
            return Err(Error::Config(format!(
                "output path {} is not a directory",
                dir.display()
            )));
        }
        fs::create_dir_all(dir.join("traces"))?;
        fs::create_dir_all(dir.join("runs"))?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        fs::write(dir.join("delta_m.csv"), self.delta_m_csv())?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("split.csv"), &self.split_manifest)?;
        for r in &self.runs {
            let stem = format!("{}_seed{}", r.strategy, r.seed);
            let trace: String = r
                .diagnostics
                .records
                .iter()
                .map(|d| d.weight_record().to_line() + "\n")
                .collect();
            fs::write(dir.join("traces").join(format!("{stem}.jsonl")), trace)?;
            fs::write(
                dir.join("runs").join(format!("{stem}.jsonl")),
                r.diagnostics.to_lines(),
            )?;
        }
        Ok(())
    }
}

/// Comparison table plus the plot series derived from a result directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// `strategy,delta_m,rank` rows sorted best first, with a header.
    pub comparison: String,
    /// File name → two-column `x y` text.
    pub plots: Vec<(String, String)>,
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

/// Builds the comparison table and plot data from a benchmark directory.
///
/// Plots: `delta_m_by_seed_<strategy>.dat` (seed, Δm%), `lambda_sweep.dat`
/// (λ, mean Δm%) over rows that set λ, `val_loss_<run>.dat` (iteration,
/// validation loss) and `weights_<run>_task<k>.dat` (iteration, weight).
pub fn build_report(dir: &Path) -> Result<Report> {
    let summary = read_csv(&dir.join("summary.csv"))?;
    let mut rows: Vec<(String, f64)> = summary
        .iter()
        .filter_map(|r| Some((r.first()?.clone(), r.get(3)?.parse::<f64>().ok()?)))
        .collect();
    rows.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut comparison = String::from("strategy,delta_m,rank\n");
    for (i, (name, dm)) in rows.iter().enumerate() {
        writeln!(comparison, "{name},{dm},{}", i + 1).expect("string write");
    }

    let mut plots = Vec::new();
    let mut sweep: Vec<(f64, f64)> = summary
        .iter()
        .filter_map(|r| {
            Some((
                r.get(1)?.parse::<f64>().ok()?,
                r.get(3)?.parse::<f64>().ok()?,
            ))
        })
        .collect();
    sweep.sort_by(|a, b| a.0.total_cmp(&b.0));
    if !sweep.is_empty() {
        let body: String = sweep.iter().map(|(x, y)| format!("{x} {y}\n")).collect();
        plots.push(("lambda_sweep.dat".to_string(), body));
    }
    let per_seed = read_csv(&dir.join("delta_m.csv"))?;
    let mut by_strategy: std::collections::BTreeMap<String, String> = Default::default();
    for r in per_seed.iter().filter(|r| r.len() == 3 && r[1] != "mean") {
        by_strategy
            .entry(r[0].clone())
            .or_default()
            .push_str(&format!("{} {}\n", r[1], r[2]));
    }
    for (name, body) in by_strategy {
        plots.push((format!("delta_m_by_seed_{name}.dat"), body));
    }

    let runs_dir = dir.join("runs");
    if runs_dir.is_dir() {
        let mut files: Vec<_> = fs::read_dir(&runs_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let mut loss = String::new();
            let mut weights: Vec<String> = Vec::new();
            for line in fs::read_to_string(&path)?.lines().filter(|l| !l.is_empty()) {
                let rec = crate::trainer::DiagRecord::from_line(line)?;
                writeln!(loss, "{} {}", rec.iteration, rec.val_loss).expect("string write");
                if weights.len() < rec.weights.len() {
                    weights.resize(rec.weights.len(), String::new());
                }
                for (k, w) in rec.weights.iter().enumerate() {
                    writeln!(weights[k], "{} {}", rec.iteration, w).expect("string write");
                }
            }
            plots.push((format!("val_loss_{stem}.dat"), loss));
            for (k, body) in weights.into_iter().enumerate() {
                plots.push((format!("weights_{stem}_task{k}.dat"), body));
            }
        }
    }
    Ok(Report { comparison, plots })
}

impl Report {
    /// Writes `comparison.csv` and `plots/*.dat` under `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out.join("plots"))?;
        fs::write(out.join("comparison.csv"), &self.comparison)?;
        for (name, body) in &self.plots {
            fs::write(out.join("plots").join(name), body)?;
        }
        Ok(())
    }
}
