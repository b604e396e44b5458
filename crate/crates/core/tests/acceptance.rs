//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines print in order.
//! Run with `cargo test -p vamo --test acceptance`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use vamo::eval::{delta_m, run_benchmark, BenchConfig, BenchmarkResult, StrategySpec};
use vamo::numeric::{
    fd_gradient, max_relative_error, Activation, Example, Matrix, ModelConfig, ParamVector,
    SharedBottomModel, Window,
};
use vamo::simulator::{rollout, EnvConfig, Observation};
use vamo::temporal::{decompose, HistoryWindow};
use vamo::trainer::{
    first_order_check, stationarity_envelope, train, MultiTaskObjective, QuadraticProblem,
    StepSchedule, Strategy, TrainConfig,
};
use vamo::weighting::{
    alignment_certificate, entropy_objective, lse_sandwich, simplex_grid_oracle, vamo_weights,
    GradientBundle,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn delta_m_arithmetic() -> Outcome {
    let stl = [12.06, 17.88, 2.87];
    let rows: [(&str, [f64; 3], f64); 6] = [
        ("vamo", [24.23, 24.25, 3.77], -55.97),
        ("vanilla", [17.67, 23.72, 2.92], -26.97),
        ("dwa", [18.42, 20.64, 2.55], -19.01),
        ("famo", [18.68, 19.56, 3.31], -26.54),
        ("pcgrad", [17.12, 21.92, 1.94], -10.72),
        ("fairgrad", [15.18, 19.49, 2.40], -6.17),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, method, want) in rows {
        let got = delta_m(&stl, &method).expect("nonzero baseline");
        worst = worst.max((got - want).abs());
        parts.push(format!("{name} {got:.2}"));
    }
    outcome(
        worst <= 0.01,
        format!("{}; max deviation {worst:.4}", parts.join(", ")),
    )
}

fn closed_form_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap = f64::NEG_INFINITY;
    for case in 0..200 {
        let k = 2 + case % 3;
        let gains: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lambda = rng.random_range(0.05..3.0);
        let w = vamo_weights(&gains, lambda).unwrap();
        let closed = entropy_objective(&w.weights, &gains, lambda).unwrap();
        let (_, grid) = simplex_grid_oracle(&gains, lambda, 1e-3).unwrap();
        worst_gap = worst_gap.max(grid - closed);
    }
    outcome(
        worst_gap <= 1e-5,
        format!("200 cases, max(grid - closed form) = {worst_gap:.3e}"),
    )
}

fn random_bundle(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> GradientBundle {
    let mut draw =
        || ParamVector::flat((0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect());
    let val = draw();
    let grads = (0..k).map(|_| draw()).collect();
    GradientBundle::new(grads, val, 0).unwrap()
}

fn certificate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lambdas = [0.1, 1.0, 10.0];
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for case in 0..1000 {
        let k = rng.random_range(1..=8);
        let bundle = random_bundle(&mut rng, k, 32);
        let cert = alignment_certificate(&bundle, lambdas[case % 3]).unwrap();
        min_slack = min_slack.min(cert.lhs - cert.rhs);
        if !cert.holds {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("1000 bundles, {violations} violations, min slack {min_slack:.3e}"),
    )
}

fn lse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lambdas = [0.01, 0.1, 1.0, 10.0];
    let spread = Normal::new(0.0, 5.0).unwrap();
    let mut violations = 0;
    for case in 0..1000 {
        let k = rng.random_range(1..=10);
        let x: Vec<f64> = (0..k).map(|_| spread.sample(&mut rng)).collect();
        if !lse_sandwich(&x, lambdas[case % 4]).unwrap().holds() {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("1000 vectors, {violations} violations"),
    )
}

fn temperature_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cold_worst: f64 = 0.0;
    let mut hot_worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=8);
        let mut gains: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        // enforce a top-2 gap of at least 0.1
        let top = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best = rng.random_range(0..k);
        gains[best] = top + rng.random_range(0.1..1.0);
        let w = vamo_weights(&gains, 1e-4).unwrap().weights;
        for (i, v) in w.iter().enumerate() {
            let target = if i == best { 1.0 } else { 0.0 };
            cold_worst = cold_worst.max((v - target).abs());
        }
    }
    for _ in 0..100 {
        let k = rng.random_range(2..=8);
        let gains: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let w = vamo_weights(&gains, 1e4).unwrap().weights;
        for v in &w {
            hot_worst = hot_worst.max((v - 1.0 / k as f64).abs());
        }
    }
    outcome(
        cold_worst <= 1e-3 && hot_worst <= 1e-3,
        format!("|w - onehot| <= {cold_worst:.2e}, |w - uniform| <= {hot_worst:.2e}"),
    )
}

fn random_model(rng: &mut ChaCha8Rng) -> (SharedBottomModel, usize, Vec<Example>) {
    let widths = |rng: &mut ChaCha8Rng, max_layers: usize| -> Vec<usize> {
        let n = rng.random_range(0..=max_layers);
        (0..n).map(|_| rng.random_range(1..=5)).collect()
    };
    let cfg = ModelConfig {
        window: rng.random_range(1..=3),
        state_dim: rng.random_range(1..=4),
        period_dim: rng.random_range(0..=3),
        encoder_widths: widths(rng, 2),
        head_widths: widths(rng, 1),
        tasks: rng.random_range(1..=3),
        activation: if rng.random_bool(0.5) {
            Activation::Tanh
        } else {
            Activation::Softplus
        },
    };
    let model = SharedBottomModel::init(cfg.clone(), rng.random()).unwrap();
    let normal = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    };
    let batch = (0..rng.random_range(1..=4))
        .map(|_| Example {
            window: Window {
                states: normal(cfg.window, cfg.state_dim, rng),
                periodic: (cfg.period_dim > 0).then(|| normal(cfg.window, cfg.period_dim, rng)),
            },
            quality: rng.random_range(0.0..2.0),
            target: StandardNormal.sample(rng),
        })
        .collect();
    let task = rng.random_range(0..cfg.tasks);
    (model, task, batch)
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (model, task, batch) = random_model(&mut rng);
        let (_, analytic) = model.loss_and_grad(task, &batch).unwrap();
        let numeric = fd_gradient(&model, task, &batch, 1e-5).unwrap();
        worst = worst.max(max_relative_error(
            analytic.values(),
            numeric.values(),
            1e-8,
        ));
    }
    outcome(
        worst <= 1e-4,
        format!("100 model/batch pairs, max relative error {worst:.2e}"),
    )
}

/// Coordinates contract monotonically under small steps, so the starting
/// task-gradient norm bounds every later one.
fn known_constants(p: &QuadraticProblem, start: &ParamVector) -> (f64, f64, f64) {
    let l = p.smoothness();
    let gamma = p
        .curvatures
        .iter()
        .map(|a| {
            a.iter()
                .zip(&p.val_curvature)
                .map(|(x, v)| x / v)
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let err: f64 = start
        .values()
        .iter()
        .zip(&p.optimum)
        .map(|(x, o)| (x - o) * (x - o))
        .sum::<f64>()
        .sqrt();
    let a_max = p.curvatures.iter().flatten().copied().fold(0.0, f64::max);
    (l, a_max * err, gamma)
}

fn vamo_config(lambda: f64, schedule: StepSchedule, iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        schedule,
        strategy: Strategy::Vamo,
        lambda: Some(lambda),
        batch_size: 2,
        ..TrainConfig::default()
    }
}

fn envelope() -> Outcome {
    let eta = 1e-3;
    let mut notes = Vec::new();
    let mut pass = true;
    for lambda in [0.0, 0.01] {
        let mut p = QuadraticProblem::aligned(8);
        let start = ParamVector::from_values(p.layout(), vec![2.0; 8]).unwrap();
        let (l, g, gamma) = known_constants(&p, &start);
        let cfg = vamo_config(lambda, StepSchedule::Constant { eta }, 5000);
        let out = train(&mut p, &start, &cfg).unwrap();
        let env = stationarity_envelope(&out.diagnostics, l, g, lambda, eta, gamma).unwrap();
        pass &= env.holds;
        notes.push(format!(
            "lambda={lambda}: avg {:.3e} <= bound {:.3e} ({} violations)",
            env.average,
            env.bound,
            env.violations.len()
        ));
    }
    let mut p = QuadraticProblem::aligned(8);
    let start: Vec<f64> = p.optimum.iter().map(|o| o + 0.1).collect();
    let start = ParamVector::from_values(p.layout(), start).unwrap();
    let cfg = vamo_config(0.0, StepSchedule::RobbinsMonro { eta0: 0.5 }, 10_000);
    let out = train(&mut p, &start, &cfg).unwrap();
    let recs = &out.diagnostics.records;
    let avg = recs.iter().map(|r| r.val_grad_norm_sq).sum::<f64>() / recs.len() as f64;
    pass &= avg < 1e-3;
    notes.push(format!("decaying schedule avg {avg:.3e} at I=10^4"));
    outcome(pass, notes.join("; "))
}

fn first_order() -> Outcome {
    let mut p = QuadraticProblem::aligned(8);
    let start = ParamVector::from_values(p.layout(), vec![2.0; 8]).unwrap();
    let cfg = vamo_config(1.0, StepSchedule::Constant { eta: 1e-3 }, 500);
    let out = train(&mut p, &start, &cfg).unwrap();
    let r = first_order_check(&out.diagnostics).unwrap();
    outcome(r > 0.9, format!("correlation {r:.6} over 500 iterations"))
}

fn period_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let tau = std::f64::consts::TAU;
    let mut recovered = 0;
    for _ in 0..100 {
        let (a1, a2) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
        let (p1, p2) = (rng.random_range(0.0..tau), rng.random_range(0.0..tau));
        let series: Vec<f64> = (0..96)
            .map(|t| {
                let t = t as f64;
                a1 * (tau * t / 24.0 + p1).sin()
                    + a2 * (tau * t / 8.0 + p2).sin()
                    + noise.sample(&mut rng)
            })
            .collect();
        let window = HistoryWindow::from_series(&series).unwrap();
        let mut got = decompose(&window, 2).unwrap().period_set();
        got.sort_unstable();
        if got == [8, 24] {
            recovered += 1;
        }
    }
    outcome(
        recovered == 100,
        format!("{recovered}/100 trials recovered {{24, 8}}"),
    )
}

fn simulator_invariants() -> Outcome {
    let env = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut over_budget = 0;
    let mut exhausted = 0;
    for i in 0..1000 {
        let task = i % env.num_tasks();
        let day = rng.random_range(1..=10);
        let seed: u64 = rng.random();
        let scale = rng.random_range(0.0..6.0);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut policy = |_: &Observation| scale * policy_rng.random_range(0.0..2.0);
        let tr = rollout(&env, &mut policy, task, day, seed, 1.0).unwrap();
        let spent: f64 = tr.steps.iter().map(|s| s.cost).sum();
        let budget = env.tasks[task].budget;
        if spent > budget {
            over_budget += 1;
        }
        if spent > 0.95 * budget {
            exhausted += 1;
        }
    }
    let task = 0;
    let curve: Vec<f64> = (0..env.steps_per_day)
        .map(|t| env.expected_volume(task, 1, t))
        .collect();
    let period = decompose(&HistoryWindow::from_series(&curve).unwrap(), 1)
        .unwrap()
        .period_set()[0];
    let fundamental = env.periodic.fundamental;
    outcome(
        over_budget == 0 && period == fundamental,
        format!(
            "1000 rollouts, {over_budget} over budget ({exhausted} spent >95%); \
             volume period {period} vs configured {fundamental}"
        ),
    )
}

fn directional_config() -> BenchConfig {
    BenchConfig {
        seeds: vec![1, 2, 3, 4, 5],
        strategies: vec![
            StrategySpec::new("vamo", Strategy::Vamo, Some(1.0)),
            StrategySpec::new("vanilla", Strategy::Vanilla, None),
            StrategySpec::new("vamo-no-val", Strategy::VamoNoVal, Some(1.0)),
        ],
        ..BenchConfig::default()
    }
}

fn mean_delta(result: &BenchmarkResult, name: &str) -> f64 {
    result.strategy(name).and_then(|s| s.delta_m).unwrap()
}

fn directional(result: &BenchmarkResult, elapsed: Duration) -> Outcome {
    let vamo = mean_delta(result, "vamo");
    let vanilla = mean_delta(result, "vanilla");
    let no_val = mean_delta(result, "vamo-no-val");
    let paired_wins = |other: &str| {
        result
            .runs_of("vamo")
            .zip(result.runs_of(other))
            .filter(|(a, b)| a.delta_m < b.delta_m)
            .count()
    };
    outcome(
        vamo < vanilla && vamo < no_val && within(elapsed, 600.0),
        format!(
            "mean dm% vamo {vamo:.3}, vanilla {vanilla:.3}, w/o validation {no_val:.3}; \
             seeds where vamo wins: {}/5 vs vanilla, {}/5 vs ablation",
            paired_wins("vanilla"),
            paired_wins("vamo-no-val"),
        ),
    )
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism(first: &BenchmarkResult) -> Outcome {
    let second = run_benchmark(&directional_config()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    first.write(a.path(), false).unwrap();
    second.write(b.path(), false).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    let differing =
        ta.iter().zip(&tb).filter(|(x, y)| x != y).count() + ta.len().abs_diff(tb.len());
    outcome(
        differing == 0,
        format!("{} result files compared, {differing} differ", ta.len()),
    )
}

fn timed(f: impl FnOnce() -> Outcome, limit_s: Option<f64>) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit_s {
        if !within(elapsed, limit) {
            out.pass = false;
            out.detail.push_str(&format!("; exceeded {limit} s"));
        }
    }
    (out, elapsed)
}

fn main() -> ExitCode {
    type Check = (&'static str, fn() -> Outcome, Option<f64>);
    let checks: [Check; 10] = [
        ("1 delta-m arithmetic", delta_m_arithmetic, Some(1.0)),
        (
            "2 closed-form optimality",
            closed_form_optimality,
            Some(30.0),
        ),
        ("3 alignment certificate", certificate, Some(10.0)),
        ("4 log-sum-exp sandwich", lse, Some(5.0)),
        ("5 temperature limits", temperature_limits, None),
        ("6 gradient correctness", gradient_check, Some(60.0)),
        ("7 stationarity envelope", envelope, Some(60.0)),
        ("8 first-order prediction", first_order, None),
        ("9 period recovery", period_recovery, Some(10.0)),
        ("10 simulator invariants", simulator_invariants, None),
    ];
    let mut failed = 0;
    let mut report = |name: &str, out: Outcome, elapsed: Duration| {
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!(
            "[{tag}] {name}: {} ({:.2} s)",
            out.detail,
            elapsed.as_secs_f64()
        );
    };
    for (name, f, limit) in checks {
        let (out, elapsed) = timed(f, limit);
        report(name, out, elapsed);
    }

    let start = Instant::now();
    let bench = run_benchmark(&directional_config()).unwrap();
    let elapsed = start.elapsed();
    report(
        "11 directional benchmark",
        directional(&bench, elapsed),
        elapsed,
    );
    let (out, elapsed) = timed(|| determinism(&bench), None);
    report("12 determinism", out, elapsed);

    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
