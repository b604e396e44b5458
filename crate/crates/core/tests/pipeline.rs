//! End-to-end runs on a tiny configuration: data files, benchmark, report.

use std::fs;
use std::io::BufReader;

use vamo::eval::{build_report, run_benchmark, BenchConfig, ModelShape, StrategySpec};
use vamo::features::{FeatureSpec, FeatureStore, TemporalConfig};
use vamo::simulator::{
    generate_dataset, read_trajectories, write_trajectories, DatasetManifest, DatasetSpec,
    EnvConfig,
};
use vamo::trainer::{Strategy, TrainConfig};

fn tiny() -> BenchConfig {
    BenchConfig {
        env: EnvConfig {
            steps_per_day: 24,
            ..EnvConfig::default()
        },
        data: DatasetSpec {
            days: 4,
            counts: vec![4, 4, 4],
            reference_days: 2,
            ..DatasetSpec::default()
        },
        features: FeatureSpec {
            window: 4,
            temporal: TemporalConfig {
                history: 24,
                ..TemporalConfig::default()
            },
        },
        model: ModelShape {
            encoder_widths: vec![8],
            head_widths: vec![4],
            ..ModelShape::default()
        },
        train: TrainConfig {
            iterations: 20,
            strategy: Strategy::Vanilla,
            lambda: None,
            batch_size: 12,
            ..TrainConfig::default()
        },
        strategies: vec![StrategySpec::new("vanilla", Strategy::Vanilla, None)],
        seeds: vec![7],
        eval_episodes: 1,
        d_val: 3,
        d_test: 4,
    }
}

#[test]
fn smoke_benchmark_emits_one_row() {
    let result = run_benchmark(&tiny()).unwrap();
    let csv = result.delta_m_csv();
    let rows: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|l| !l.contains(",mean,"))
        .collect();
    assert_eq!(rows.len(), 1, "{csv}");
    assert!(rows[0].starts_with("vanilla,7,"));
    assert!(result
        .strategy("vanilla")
        .unwrap()
        .delta_m
        .unwrap()
        .is_finite());
}

#[test]
fn lambda_sweep_rows_and_hot_trace() {
    let cfg = BenchConfig {
        strategies: StrategySpec::lambda_sweep(&[0.1, 1.0, 1e4]),
        ..tiny()
    };
    let result = run_benchmark(&cfg).unwrap();
    assert_eq!(result.strategies.len(), 3);
    let hot = result.runs_of("vamo-lambda-10000").next().unwrap();
    for rec in &hot.diagnostics.records {
        for w in &rec.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-3, "{:?}", rec.weights);
        }
    }
}

#[test]
fn stored_means_recompute_exactly() {
    let cfg = BenchConfig {
        seeds: vec![1, 2, 3],
        ..tiny()
    };
    let dir = tempfile::tempdir().unwrap();
    run_benchmark(&cfg)
        .unwrap()
        .write(dir.path(), false)
        .unwrap();
    let text = fs::read_to_string(dir.path().join("delta_m.csv")).unwrap();
    let mut per_seed = Vec::new();
    let mut stored_mean = None;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[1] == "mean" {
            stored_mean = Some(f[2].parse::<f64>().unwrap());
        } else {
            per_seed.push(f[2].parse::<f64>().unwrap());
        }
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    assert_eq!(per_seed.len(), 3);
    assert_eq!(stored_mean, Some(mean));

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let stl_row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let returns: Vec<f64> = metrics
        .lines()
        .filter(|l| l.starts_with("stl,") && l.contains(",store_conversion,"))
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    let want = returns.iter().sum::<f64>() / returns.len() as f64;
    assert_eq!(stl_row[5].parse::<f64>().unwrap(), want);
}

#[test]
fn existing_results_are_not_overwritten() {
    let result = run_benchmark(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    result.write(dir.path(), false).unwrap();
    assert!(result.write(dir.path(), false).is_err());
    result.write(dir.path(), true).unwrap();
}

#[test]
fn report_has_comparison_and_plots() {
    let cfg = BenchConfig {
        strategies: vec![
            StrategySpec::new("vamo", Strategy::Vamo, Some(1.0)),
            StrategySpec::new("vanilla", Strategy::Vanilla, None),
        ],
        ..tiny()
    };
    let dir = tempfile::tempdir().unwrap();
    run_benchmark(&cfg)
        .unwrap()
        .write(dir.path(), false)
        .unwrap();
    let report = build_report(dir.path()).unwrap();
    let lines: Vec<&str> = report.comparison.lines().collect();
    assert_eq!(lines[0], "strategy,delta_m,rank");
    assert_eq!(lines.len(), 3);
    let names: Vec<&str> = report.plots.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"lambda_sweep.dat"));
    assert!(names.contains(&"val_loss_vamo_seed7.dat"));
    assert!(names.contains(&"weights_vamo_seed7_task2.dat"));
    for (_, body) in &report.plots {
        for line in body.lines() {
            assert_eq!(line.split(' ').count(), 2, "{line}");
        }
    }
    let out = tempfile::tempdir().unwrap();
    report.write(out.path()).unwrap();
    assert!(out.path().join("plots/lambda_sweep.dat").exists());
}

#[test]
fn no_temporal_ablation_has_no_periodic_input() {
    let base = tiny();
    let spec = FeatureSpec {
        temporal: TemporalConfig {
            enabled: false,
            ..base.features.temporal.clone()
        },
        ..base.features.clone()
    };
    let data = generate_dataset(&base.env, &base.data).unwrap();
    let store = FeatureStore::build(&base.env, &spec, base.data.seed, &[1, 2, 3, 4]).unwrap();
    for tr in &data.trajectories {
        for t in 0..tr.steps.len() {
            assert!(store.window(tr, t).unwrap().periodic.is_none());
        }
    }
    assert_eq!(base.model.config(&spec, 3).period_dim, 0);

    let cfg = BenchConfig {
        strategies: vec![StrategySpec {
            temporal: false,
            ..StrategySpec::new("vamo-no-temporal", Strategy::Vamo, Some(1.0))
        }],
        ..tiny()
    };
    let result = run_benchmark(&cfg).unwrap();
    assert!(!result.strategy("vamo-no-temporal").unwrap().temporal);
}

#[test]
fn dataset_files_round_trip_on_disk() {
    let cfg = tiny();
    let data = generate_dataset(&cfg.env, &cfg.data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectories.csv");
    write_trajectories(fs::File::create(&path).unwrap(), &data.trajectories).unwrap();
    let manifest = DatasetManifest {
        config_hash: cfg.env.config_hash(),
        seed: cfg.data.seed,
        days: cfg.data.days,
        counts: cfg.data.counts.clone(),
        reference_returns: data.reference_returns.clone(),
        trajectory_file: "trajectories.csv".into(),
    };
    fs::write(dir.path().join("manifest.txt"), manifest.to_text()).unwrap();

    let manifest =
        DatasetManifest::from_text(&fs::read_to_string(dir.path().join("manifest.txt")).unwrap())
            .unwrap();
    let file = fs::File::open(dir.path().join(&manifest.trajectory_file)).unwrap();
    let mut back = read_trajectories(BufReader::new(file)).unwrap();
    manifest.assign_quality(&mut back).unwrap();
    assert_eq!(back.len(), data.trajectories.len());
    for (a, b) in back.iter().zip(&data.trajectories) {
        assert_eq!(a.quality, b.quality);
        assert_eq!(a.total_return(), b.total_return());
    }
}
