use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bianchor::cli::METRICS_COLUMNS;
use bianchor::nnet::load_checkpoint;

fn bianchor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bianchor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bianchor(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_config(dir: &Path, problem: serde_json::Value) -> PathBuf {
    let config = serde_json::json!({
        "problem": problem,
        "backbone": {"hidden": [16, 16], "n_freq": 2, "iterations": 40, "batch_size": 32, "lr": 0.003, "seed": 1},
        "sidenet": {"hidden": [16], "n_freq": 2, "batch_size": 8, "iterations": 10, "lr": 0.001, "seed": 2},
        "sampler": {"solver": "bi_anchor", "intervals": 4, "n_samples": 40, "seed": 3},
        "bench": {"n_samples": 40, "n_reference": 40, "n_projections": 8, "reference_intervals": 20, "seed": 4},
        "output": {"directory": s(&dir.join("default_out"))}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

fn config(dir: &Path) -> PathBuf {
    write_config(dir, serde_json::json!({"dataset": "two_moons", "dim": 2}))
}

/// Trains a backbone and SideNet into `dir/models`.
fn trained(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = config(dir);
    let models = dir.join("models");
    ok(&["train-backbone", "--config", &s(&cfg), "--out", &s(&models)]);
    let backbone = models.join("backbone.ckpt.json");
    ok(&["train-sidenet", "--config", &s(&cfg), "--backbone", &s(&backbone), "--out", &s(&models)]);
    (cfg, backbone, models.join("sidenet.ckpt.json"))
}

fn nfe_per_sample(dir: &Path) -> u64 {
    let text = std::fs::read_to_string(dir.join("nfe_report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    report["nfe_per_sample"].as_u64().unwrap()
}

#[test]
fn train_backbone_writes_a_loadable_deterministic_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train-backbone", "--config", &s(&cfg), "--out", &s(&a)]);
    ok(&["train-backbone", "--config", &s(&cfg), "--out", &s(&b)]);
    let ckpt_a = std::fs::read(a.join("backbone.ckpt.json")).unwrap();
    assert_eq!(ckpt_a, std::fs::read(b.join("backbone.ckpt.json")).unwrap());
    assert!(load_checkpoint(a.join("backbone.ckpt.json")).is_ok());
    let losses = std::fs::read_to_string(a.join("backbone_loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 41);
    assert!(a.join("manifest_train_backbone.json").exists());
}

#[test]
fn seed_override_changes_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train-backbone", "--config", &s(&cfg), "--out", &s(&a)]);
    ok(&["train-backbone", "--config", &s(&cfg), "--out", &s(&b), "--seed", "99"]);
    assert_ne!(
        std::fs::read(a.join("backbone.ckpt.json")).unwrap(),
        std::fs::read(b.join("backbone.ckpt.json")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), serde_json::json!({"dim": 2}));
    let out = bianchor(&["train-backbone", "--config", &s(&cfg), "--out", &s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn train_sidenet_rejects_a_missing_backbone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let missing = tmp.path().join("nope.json");
    let out = bianchor(&["train-sidenet", "--config", &s(&cfg), "--backbone", &s(&missing), "--out", &s(tmp.path())]);
    assert!(!out.status.success());
}

#[test]
fn sample_honours_the_requested_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, backbone, sidenet) = trained(tmp.path());

    let ba = tmp.path().join("ba");
    ok(&[
        "sample", "--config", &s(&cfg), "--backbone", &s(&backbone), "--sidenet", &s(&sidenet),
        "--solver", "bi_anchor", "--nfe", "5", "--out", &s(&ba),
    ]);
    assert_eq!(nfe_per_sample(&ba), 5);
    let samples = std::fs::read_to_string(ba.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 41);

    let euler = tmp.path().join("euler");
    ok(&[
        "sample", "--config", &s(&cfg), "--backbone", &s(&backbone),
        "--solver", "euler", "--nfe", "100", "--out", &s(&euler),
    ]);
    assert_eq!(nfe_per_sample(&euler), 100);

    let out = bianchor(&[
        "sample", "--config", &s(&cfg), "--backbone", &s(&backbone),
        "--solver", "runge_kutta", "--out", &s(&tmp.path().join("bad")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn bench_writes_one_row_per_solver_and_step_count() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, backbone, sidenet) = trained(tmp.path());
    let out = tmp.path().join("bench");
    ok(&[
        "bench", "--config", &s(&cfg), "--backbone", &s(&backbone), "--sidenet", &s(&sidenet),
        "--out", &s(&out),
    ]);
    let mut reader = csv::Reader::from_path(out.join("metrics.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, METRICS_COLUMNS);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 20);
    for row in &rows {
        let w: f64 = row[3].parse().unwrap();
        assert!(w.is_finite() && w >= 0.0);
    }
    assert!(out.join("bench_summary.json").exists());
    assert!(out.join("manifest_bench.json").exists());
}

#[test]
fn verify_passes_and_catches_an_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["verify", "--out", &s(tmp.path())]);
    assert!(!String::from_utf8_lossy(&out.stdout).is_empty());
    assert!(tmp.path().join("verify_report.txt").exists());

    let broken = bianchor(&["verify", "--inject-fault", "corrupt-lobatto-weights"]);
    assert!(!broken.status.success());
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL"));
}
