use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use stfield_cli::manifest::{Manifest, RunStatus};

const TINY: &str = r#"
seed = 3
baseline = true
truncation = { count = 4 }

[simulation]
nx = 16
ny = 12
stations = [40, 15, 15]
n_components = 4
t_len = 24

[model]
hidden_layers = 2
width = 16
batch_size = 16
max_epochs = 30

[maps]
snapshots = [0, 5]
"#;

fn stfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stfield"))
        .args(args)
        .env_remove("STFIELD_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn ids(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_long_format_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.toml", TINY);
    let out = dir.path().join("out");
    let o = stfield(&["--config", s(&cfg), "--output", s(&out), "--quiet", "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for (set, n) in [("train", 40), ("val", 15), ("test", 15)] {
        assert_eq!(lines(&out.join(format!("data/{set}_stations.csv"))), n + 1);
        assert_eq!(lines(&out.join(format!("data/{set}_measurements.csv"))), n * 24 + 1);
    }
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, RunStatus::Ok);
    assert!(m.artifact("grid.csv").is_some());

    // Same config and seed: byte-identical files.
    let again = dir.path().join("again");
    assert!(stfield(&["--config", s(&cfg), "--output", s(&again), "simulate"]).status.success());
    for a in &m.artifacts {
        assert_eq!(
            std::fs::read(out.join(&a.path)).unwrap(),
            std::fs::read(again.join(&a.path)).unwrap(),
            "{}",
            a.path.display()
        );
    }
    // A different seed changes the data.
    let other = dir.path().join("other");
    assert!(stfield(&["--config", s(&cfg), "--output", s(&other), "--seed", "4", "simulate"]).status.success());
    assert_ne!(
        std::fs::read(out.join("data/train_measurements.csv")).unwrap(),
        std::fs::read(other.join("data/train_measurements.csv")).unwrap()
    );
}

#[test]
fn full_scale_grid_station_sets_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "big.toml",
        "[simulation]\nnx = 139\nny = 88\nstations = [2000, 1000, 1000]\nt_len = 4\n",
    );
    let out = dir.path().join("out");
    let o = stfield(&["--config", s(&cfg), "--output", s(&out), "--quiet", "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut seen = HashSet::new();
    for (set, n) in [("train", 2000), ("val", 1000), ("test", 1000)] {
        let v = ids(&out.join(format!("data/{set}_stations.csv")));
        assert_eq!(v.len(), n);
        for id in v {
            assert!(seen.insert(id), "station in two sets");
        }
    }
    assert_eq!(lines(&out.join("grid.csv")), 139 * 88 + 1);
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("run");
    let start = Instant::now();
    let o = stfield(&["--config", s(&cfg), "--output", s(&out), "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 60);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("multi_output") && stdout.contains("single_output_baseline"), "{stdout}");

    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, RunStatus::Ok);
    for p in [
        "metrics.csv",
        "diagnostics.json",
        "basis/phi.csv",
        "model/model.json",
        "baseline/model.json",
        "model_training_log.csv",
        "maps/coeff_01.csv",
        "maps/coeff_04.csv",
        "maps/field_t0005.csv",
        "maps/truth_t0005.csv",
        "images/field_t0000.svg",
        "variograms/data.csv",
        "variograms/model_residual.csv",
        "variograms/model_residual.csv.json",
    ] {
        assert!(m.artifact(p).is_some(), "{p} not in manifest");
        assert!(out.join(p).exists(), "{p}");
    }
    let metrics = stfield_cli::commands::read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 2);
    assert!(metrics.iter().all(|r| r.k_used == 4 && r.test_mae.is_finite()));

    // Report is idempotent and leaves recorded artifacts untouched.
    let o = stfield(&["report", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("report/summary.txt")).unwrap();
    let svg = std::fs::read(out.join("report/images/coeff_01.svg")).unwrap();
    assert!(summary.contains("test MAE"));
    assert!(stfield(&["report", s(&out)]).status.success());
    assert_eq!(summary, std::fs::read_to_string(out.join("report/summary.txt")).unwrap());
    assert_eq!(svg, std::fs::read(out.join("report/images/coeff_01.svg")).unwrap());
    assert_eq!(Manifest::load(&out).unwrap(), m);

    // Missing artifact: partial report, exit code 2.
    std::fs::remove_file(out.join("maps/coeff_02.csv")).unwrap();
    let o = stfield(&["report", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("coeff_02.csv"));
    let summary = std::fs::read_to_string(out.join("report/summary.txt")).unwrap();
    assert!(summary.contains("missing or modified"));

    // Stages individually, from the files the run wrote.
    let d = |f: &str| out.join("data").join(f);
    let stages = dir.path().join("stages");
    let o = stfield(&[
        "--output",
        s(&stages.join("basis")),
        "decompose",
        "--input",
        s(&d("train_stations.csv")),
        s(&d("train_measurements.csv")),
        "--input",
        s(&d("val_stations.csv")),
        s(&d("val_measurements.csv")),
        "--count",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(stages.join("basis/basis/phi.csv")).unwrap(),
        std::fs::read(out.join("basis/phi.csv")).unwrap()
    );
    let o = stfield(&[
        "--config",
        s(&cfg),
        "--output",
        s(&stages.join("train")),
        "train",
        "--train",
        s(&d("train_stations.csv")),
        s(&d("train_measurements.csv")),
        "--val",
        s(&d("val_stations.csv")),
        s(&d("val_measurements.csv")),
        "--basis",
        s(&stages.join("basis/basis")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = stfield(&[
        "--output",
        s(&stages.join("predict")),
        "predict",
        "--model",
        s(&stages.join("train/model")),
        "--grid",
        s(&out.join("grid.csv")),
        "--stations",
        s(&d("test_stations.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&stages.join("predict/predicted_measurements.csv")), 15 * 24 + 1);
    let o = stfield(&[
        "--output",
        s(&stages.join("variogram")),
        "variogram",
        "--stations",
        s(&d("test_stations.csv")),
        "--measurements",
        s(&d("test_measurements.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(stages.join("variogram/variogram.csv")).unwrap(),
        std::fs::read(out.join("variograms/data.csv")).unwrap()
    );
}

#[test]
fn report_without_manifest_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = stfield(&["report", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest"));
}

#[test]
fn csv_input_without_validation_share_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "data.toml",
        "[data]\nstations = \"s.csv\"\nmeasurements = \"m.csv\"\nsplit = [0.8, 0.0, 0.2]\n",
    );
    let out = dir.path().join("out");
    let o = stfield(&["--config", s(&cfg), "--output", s(&out), "run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("validation"));
    assert!(!out.join("model").exists());
}

#[test]
fn csv_input_with_gaps_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write_config(dir.path(), "sim.toml", TINY);
    let data = dir.path().join("sim");
    assert!(stfield(&["--config", s(&sim), "--output", s(&data), "simulate"]).status.success());
    // Punch a few holes into one file and use it as the whole dataset.
    let m = std::fs::read_to_string(data.join("data/train_measurements.csv")).unwrap();
    let punched: Vec<String> = m
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i > 0 && i % 97 == 0 {
                let mut f: Vec<&str> = l.split(',').collect();
                f[2] = "";
                f.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(dir.path().join("m.csv"), punched.join("\n") + "\n").unwrap();
    std::fs::copy(data.join("data/train_stations.csv"), dir.path().join("s.csv")).unwrap();
    std::fs::copy(data.join("grid.csv"), dir.path().join("grid.csv")).unwrap();
    let cfg = write_config(
        dir.path(),
        "real.toml",
        r#"
        [data]
        stations = "s.csv"
        measurements = "m.csv"
        grid = "grid.csv"
        [model]
        hidden_layers = 1
        width = 8
        max_epochs = 5
        "#,
    );
    let root = dir.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_stfield"))
        .args(["--config", s(&cfg), "--quiet", "run"])
        .env("STFIELD_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = root.join("real");
    assert_eq!(ids(&out.join("data/train_stations.csv")).len(), 24);
    assert_eq!(ids(&out.join("data/val_stations.csv")).len(), 8);
    assert!(out.join("maps/field_t0000.csv").exists());
    assert!(!out.join("maps/truth_t0000.csv").exists());
}
