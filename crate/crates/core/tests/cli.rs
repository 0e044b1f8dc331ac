mod common;

use std::path::Path;
use std::process::{Command, Output};

fn gridrisk(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridrisk"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = gridrisk(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Synthesizes a small world and trains a quick model in `dir`.
fn prepared(dir: &Path) {
    std::fs::write(dir.join("world.cfg"), common::small_spec(3).to_text()).unwrap();
    std::fs::write(dir.join("run.cfg"), common::quick_config(2).to_text()).unwrap();
    ok(&["synth", "--spec", "world.cfg", "--out", "data"], dir);
    ok(
        &["train", "--config", "run.cfg", "--data", "data", "--checkpoint", "model.bin"],
        dir,
    );
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.display().to_string(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&["--help"], dir.path());
    let text = String::from_utf8(help.stdout).unwrap();
    for sub in ["synth", "ingest", "train", "eval", "ablate", "predict"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    ok(&["--version"], dir.path());
}

#[test]
fn missing_required_argument_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridrisk(&["eval", "--data", "data", "--report", "r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn missing_data_directory_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridrisk(&["ingest", "--data", "nowhere", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "learning_rat = 0.1\n").unwrap();
    let out = gridrisk(&["train", "--config", "run.cfg", "--data", "data"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn train_echoes_resolved_configuration() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("world.cfg"), common::small_spec(1).to_text()).unwrap();
    std::fs::write(dir.path().join("run.cfg"), common::quick_config(2).to_text()).unwrap();
    ok(&["synth", "--spec", "world.cfg", "--out", "data"], dir.path());
    let out = ok(
        &["train", "--config", "run.cfg", "--data", "data", "--epochs", "1", "--loss", "xent"],
        dir.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("epochs = 1"), "{text}");
    assert!(text.contains("loss = xent"), "{text}");
    assert!(dir.path().join("data/model.bin").exists());
}

#[test]
fn predict_covers_every_tract_and_hour() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    ok(
        &[
            "predict",
            "--checkpoint",
            "model.bin",
            "--weather",
            "data/weather.csv",
            "--tracts",
            "data/tracts.csv",
            "--out",
            "forecast.csv",
        ],
        dir.path(),
    );
    let text = std::fs::read_to_string(dir.path().join("forecast.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tract_id,hour,pred_raw,pred_thresholded"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20 * 300);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let raw: f64 = cols[2].parse().unwrap();
        let thr: f64 = cols[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&raw));
        assert!(thr == raw || (thr == 0.0 && raw < 0.05));
    }
}

#[test]
fn eval_is_idempotent_and_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let before = snapshot(&dir.path().join("data"));
    let model = std::fs::read(dir.path().join("model.bin")).unwrap();
    let args = ["eval", "--checkpoint", "model.bin", "--data", "data", "--report", "out/report.csv"];
    ok(&args, dir.path());
    let first = snapshot(&dir.path().join("out"));
    ok(&args, dir.path());
    assert_eq!(snapshot(&dir.path().join("out")), first);
    assert_eq!(snapshot(&dir.path().join("data")), before);
    assert_eq!(std::fs::read(dir.path().join("model.bin")).unwrap(), model);

    let report = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "mask,loss,mae_mean,mae_std,rmse_mean,rmse_std");
    assert_eq!(lines.len(), 2);
}

#[test]
fn ablate_writes_twelve_report_rows() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("world.cfg"), common::small_spec(4).to_text()).unwrap();
    std::fs::write(dir.path().join("run.cfg"), common::quick_config(1).to_text()).unwrap();
    ok(&["synth", "--spec", "world.cfg", "--out", "data"], dir.path());
    ok(
        &["ablate", "--config", "run.cfg", "--data", "data", "--report", "ablation.csv", "--epochs", "1"],
        dir.path(),
    );
    let report = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(report.lines().count(), 13);
    let table = std::fs::read_to_string(dir.path().join("ablation_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
}
