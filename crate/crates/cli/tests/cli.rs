use std::path::{Path, PathBuf};
use std::process::Command;

use vamo::eval::BenchConfig;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn vamo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vamo"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vamo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["default.toml", "lambda_sweep.toml", "tiny.toml"] {
        let text = std::fs::read_to_string(config(name)).unwrap();
        let cfg: BenchConfig = toml::from_str(&text).unwrap();
        cfg.validate().unwrap();
    }
    let text = std::fs::read_to_string(config("default.toml")).unwrap();
    let cfg: BenchConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg.seeds.len(), 5);
    assert_eq!(cfg.data.counts, vec![20, 20, 10]);
    assert_eq!(cfg.strategies.len(), 6);
}

#[test]
fn full_command_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();
    let cfg = config("tiny.toml").display().to_string();

    ok(&["gen-data", "--config", &cfg, "--out", &p("data")]);
    assert!(dir.path().join("data/trajectories.csv").exists());
    assert!(dir.path().join("data/manifest.txt").exists());

    ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &p("data"),
        "--out",
        &p("model"),
    ]);
    let diag = std::fs::read_to_string(dir.path().join("model/diagnostics.jsonl")).unwrap();
    assert_eq!(diag.lines().count(), 20);

    ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &p("data"),
        "--out",
        &p("stl"),
        "--strategy",
        "stl",
    ]);
    assert!(dir.path().join("stl/model_task2.ckpt").exists());

    let csv = ok(&[
        "evaluate",
        "--config",
        &cfg,
        "--model",
        &p("model"),
        "--out",
        &p("eval.csv"),
    ]);
    assert!(csv.starts_with("task,episodes,mean_return"));
    assert_eq!(csv.lines().count(), 4);

    ok(&["benchmark", "--config", &cfg, "--out", &p("bench")]);
    assert!(
        !vamo(&["benchmark", "--config", &cfg, "--out", &p("bench")])
            .status
            .success()
    );

    let table = ok(&["report", "--results", &p("bench"), "--out", &p("report")]);
    assert!(table.starts_with("strategy,delta_m,rank"));
    assert!(dir.path().join("report/plots/lambda_sweep.dat").exists());
}

#[test]
fn mismatched_env_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();
    let tiny = std::fs::read_to_string(config("tiny.toml")).unwrap();
    let other = tiny.replace("steps_per_day = 24", "steps_per_day = 32");
    std::fs::write(p("other.toml"), other).unwrap();
    let cfg = config("tiny.toml").display().to_string();
    ok(&["gen-data", "--config", &cfg, "--out", &p("data")]);
    let out = vamo(&[
        "train",
        "--config",
        &p("other.toml"),
        "--data",
        &p("data"),
        "--out",
        &p("m"),
    ]);
    assert!(!out.status.success());
}
