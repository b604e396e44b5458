//! `vamo` command-line front end.
//!
//! Every subcommand reads the same TOML layout (see `configs/` in the
//! repository): top-level `seeds`, `eval_episodes`, `d_val`, `d_test`, then
//! `[env]`, `[data]`, `[features]`, `[model]`, `[train]` and an optional
//! `[[strategies]]` list. Missing keys take library defaults.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use vamo::dataset::temporal_split;
use vamo::eval::{build_report, evaluate_policy, run_benchmark, BenchConfig};
use vamo::features::FeatureStore;
use vamo::numeric::{ModelConfig, ParamVector, SharedBottomModel};
use vamo::simulator::{
    generate_dataset, mix_seed, read_trajectories, write_trajectories, DatasetManifest,
};
use vamo::trainer::{train, OfflineObjective, Strategy};

#[derive(Parser)]
#[command(
    name = "vamo",
    version,
    about = "Validation-aligned multi-task bidding benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate behavior-policy trajectories and write them with a manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[data] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[train] strategy`.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Overrides `[train] lambda`.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Roll out a trained model greedily on fresh test-day auctions.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train STL plus every configured strategy on every seed.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace results already present in `out`.
        #[arg(long)]
        overwrite: bool,
    },
    /// Comparison table and plot data from a benchmark directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Written next to the checkpoints so `evaluate` can rebuild the model.
#[derive(Debug, Serialize, Deserialize)]
struct ModelCard {
    strategy: Strategy,
    lambda: Option<f64>,
    /// Quality condition per task used at evaluation time.
    quality: Vec<f64>,
    checkpoints: Vec<String>,
    model: ModelConfig,
}

fn load_config(path: &Path) -> Result<BenchConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut cfg: BenchConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    // lambda falls back to 1 only for strategies that use it
    let lambda_given = raw
        .get("train")
        .and_then(|t| t.as_table())
        .is_some_and(|t| t.contains_key("lambda"));
    if !lambda_given && !cfg.train.strategy.needs_lambda() {
        cfg.train.lambda = None;
    }
    Ok(cfg)
}

fn gen_data(cfg: &BenchConfig, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = cfg.data.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = generate_dataset(&cfg.env, &spec)?;
    fs::create_dir_all(out)?;
    let file = fs::File::create(out.join("trajectories.csv"))?;
    write_trajectories(std::io::BufWriter::new(file), &ds.trajectories)?;
    let manifest = DatasetManifest {
        config_hash: cfg.env.config_hash(),
        seed: spec.seed,
        days: spec.days,
        counts: spec.counts.clone(),
        reference_returns: ds.reference_returns.clone(),
        trajectory_file: "trajectories.csv".into(),
    };
    fs::write(out.join("manifest.txt"), manifest.to_text())?;
    println!(
        "wrote {} trajectories over {} days to {}",
        ds.trajectories.len(),
        spec.days,
        out.display()
    );
    Ok(())
}

fn load_dataset(
    cfg: &BenchConfig,
    dir: &Path,
) -> Result<(DatasetManifest, Vec<vamo::simulator::Trajectory>)> {
    let manifest = DatasetManifest::from_text(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    if manifest.config_hash != cfg.env.config_hash() {
        bail!(
            "dataset in {} was generated with a different [env] section",
            dir.display()
        );
    }
    let file = fs::File::open(dir.join(&manifest.trajectory_file))?;
    let mut trajectories = read_trajectories(BufReader::new(file))?;
    manifest.assign_quality(&mut trajectories)?;
    Ok((manifest, trajectories))
}

fn train_cmd(
    cfg: &BenchConfig,
    data: &Path,
    out: &Path,
    strategy: Option<Strategy>,
    lambda: Option<f64>,
) -> Result<()> {
    let (manifest, trajectories) = load_dataset(cfg, data)?;
    let k = cfg.env.num_tasks();
    let split = temporal_split(trajectories, k, cfg.d_val, cfg.d_test)?;
    let days: Vec<usize> = (1..=manifest.days).collect();
    let store = FeatureStore::build(&cfg.env, &cfg.features, manifest.seed, &days)?;

    let mut tcfg = cfg.train.clone();
    if let Some(s) = strategy {
        tcfg.strategy = s;
        if lambda.is_none() && !s.needs_lambda() {
            tcfg.lambda = None;
        }
    }
    if lambda.is_some() {
        tcfg.lambda = lambda;
    }
    let model_cfg = cfg.model.config(&cfg.features, k);
    let init = SharedBottomModel::init(model_cfg.clone(), mix_seed(&[tcfg.seed, 0x1417]))?;
    let mut objective = OfflineObjective::new(
        model_cfg.clone(),
        &split,
        &store,
        tcfg.batch_size,
        tcfg.seed,
    )?;
    let outcome = train(&mut objective, init.params(), &tcfg)?;

    fs::create_dir_all(out)?;
    let names: Vec<String> = if outcome.params.len() == 1 {
        vec!["model.ckpt".into()]
    } else {
        (0..outcome.params.len())
            .map(|t| format!("model_task{t}.ckpt"))
            .collect()
    };
    for (name, params) in names.iter().zip(&outcome.params) {
        params.write_checkpoint(fs::File::create(out.join(name))?)?;
    }
    fs::write(
        out.join("diagnostics.jsonl"),
        outcome.diagnostics.to_lines(),
    )?;
    let card = ModelCard {
        strategy: tcfg.strategy,
        lambda: tcfg.lambda,
        quality: split.max_train_quality(),
        checkpoints: names,
        model: model_cfg,
    };
    fs::write(out.join("model.toml"), toml::to_string(&card)?)?;
    let last = outcome.diagnostics.records.last();
    println!(
        "trained {} for {} iterations; final validation loss {}",
        tcfg.strategy.name(),
        tcfg.iterations,
        last.map_or(f64::NAN, |r| r.val_loss)
    );
    Ok(())
}

fn evaluate_cmd(cfg: &BenchConfig, model_dir: &Path, out: &Path) -> Result<()> {
    let card: ModelCard = toml::from_str(&fs::read_to_string(model_dir.join("model.toml"))?)?;
    let read = |name: &str| -> Result<ParamVector> {
        let file = fs::File::open(model_dir.join(name))?;
        Ok(ParamVector::read_checkpoint(BufReader::new(file))?)
    };
    let params: Vec<ParamVector> = card
        .checkpoints
        .iter()
        .map(|n| read(n))
        .collect::<Result<_>>()?;
    let seeds: Vec<u64> = cfg
        .seeds
        .iter()
        .flat_map(|&s| (0..cfg.eval_episodes).map(move |j| mix_seed(&[s, 0xE7, j as u64])))
        .collect();
    let mut csv = String::from("task,episodes,mean_return,std_return,mean_cost,std_cost,roi\n");
    for task in 0..cfg.env.num_tasks() {
        let p = params.get(task).unwrap_or(&params[0]).clone();
        let model = SharedBottomModel::with_params(card.model.clone(), p)?;
        let m = evaluate_policy(
            &model,
            &cfg.env,
            &cfg.features,
            task,
            cfg.d_test,
            &seeds,
            card.quality[task],
        )?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            cfg.env.tasks[task].name,
            m.runs(),
            m.mean_return,
            m.std_return,
            m.mean_cost,
            m.std_cost,
            m.roi.map_or_else(String::new, |r| r.to_string())
        ));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn benchmark_cmd(cfg: &BenchConfig, out: &Path, overwrite: bool) -> Result<()> {
    if out.join("summary.csv").exists() && !overwrite {
        bail!(
            "{} already holds results; pass --overwrite to replace them",
            out.display()
        );
    }
    let result = run_benchmark(cfg)?;
    result.write(out, overwrite)?;
    print!("{}", result.summary_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => gen_data(&load_config(&config)?, &out, seed),
        Command::Train {
            config,
            data,
            out,
            strategy,
            lambda,
        } => train_cmd(&load_config(&config)?, &data, &out, strategy, lambda),
        Command::Evaluate { config, model, out } => {
            evaluate_cmd(&load_config(&config)?, &model, &out)
        }
        Command::Benchmark {
            config,
            out,
            overwrite,
        } => benchmark_cmd(&load_config(&config)?, &out, overwrite),
        Command::Report { results, out } => {
            let report = build_report(&results)?;
            report.write(&out)?;
            print!("{}", report.comparison);
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    run(Cli::parse())
}
