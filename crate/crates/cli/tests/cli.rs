//! Black-box tests of the vpd binary: exit codes, report rendering, and
//! a small end-to-end pipeline run with determinism checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vpd_core::corpus::{read_chunks_file, stratified_split, Label};
use vpd_core::eval::{self, ConfusionMatrix};
use vpd_core::pipeline::EvalArtifact;

fn vpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vpd-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn help_exits_zero() {
    let out = vpd(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_two() {
    let out = vpd(&["frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_without_features_exits_two() {
    let out = vpd(&["train", "--model", "gbt", "--out", "/tmp/nowhere"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_feature_set_exits_two() {
    let dir = tmp("badset");
    let out = vpd(&["features", "--set", "everything", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    fs::remove_dir_all(dir).ok();
}

#[test]
fn report_renders_stored_evaluation() {
    let dir = tmp("report");
    let cm = ConfusionMatrix {
        counts: [[82, 26], [38, 94]],
    };
    let artifact = EvalArtifact {
        model: "gbt".into(),
        features: "all".into(),
        cm,
        report: eval::report(&cm).unwrap(),
    };
    let path = dir.join("report_gbt.json");
    artifact.save(&path).unwrap();

    let out = vpd(&["report", "--report", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("Testing CM for gbt (all)"));
    assert!(text.contains("accuracy: 0.733"));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn report_missing_class_exits_three() {
    let dir = tmp("badreport");
    let cm = ConfusionMatrix {
        counts: [[10, 0], [5, 0]],
    };
    let artifact = EvalArtifact {
        model: "gbt".into(),
        features: "all".into(),
        cm,
        report: eval::report(&cm).unwrap(),
    };
    let path = dir.join("report.json");
    artifact.save(&path).unwrap();
    let out = vpd(&["report", "--report", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3);

    fs::write(dir.join("garbage.json"), "{not json").unwrap();
    let out = vpd(&["report", "--report", dir.join("garbage.json").to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    fs::remove_dir_all(dir).ok();
}

#[test]
fn bad_jobs_env_exits_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_vpd"))
        .args(["stats", "--out", "/tmp/nowhere"])
        .env("VPD_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

/// Largest per-class test size the exact-fill splitter accepts here.
fn feasible_target(dir: &Path, seed: u64) -> usize {
    let chunks = read_chunks_file(dir.join("chunks.jsonl")).unwrap();
    let h = chunks.iter().filter(|c| c.label == Label::H).count();
    let p = chunks.len() - h;
    let mut t = h.min(p) / 4;
    while t > 1 && stratified_split(&chunks, seed, t).is_err() {
        t -= 1;
    }
    t
}

#[test]
fn pipeline_smoke_run_is_deterministic() {
    let dir = tmp("smoke");
    let d = dir.to_str().unwrap();

    let out = vpd(&["synth", "--healthy", "10", "--pathological", "10", "--seed", "5", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("seed = 5"), "seed echoed for the log");

    let out = vpd(&["preprocess", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // identical artifacts regardless of worker count
    let out = vpd(&["features", "--set", "af-base", "--out", d, "--jobs", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let two_jobs = fs::read(dir.join("features.csv")).unwrap();
    let out = vpd(&["features", "--set", "af-base", "--out", d, "--jobs", "1"]);
    assert_eq!(code(&out), 0);
    let one_job = fs::read(dir.join("features.csv")).unwrap();
    assert_eq!(one_job, two_jobs);

    let t = feasible_target(&dir, 9).to_string();
    let out = vpd(&["split", "--seed", "9", "--test-per-class", &t, "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = vpd(&["train", "--model", "gbt", "--features", "af-base", "--seed", "3", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("model_gbt.json").exists());
    assert!(dir.join("report_gbt.json").exists());

    // rerun with the same seed: byte-identical model and report
    let model_a = fs::read(dir.join("model_gbt.json")).unwrap();
    let report_a = fs::read(dir.join("report_gbt.json")).unwrap();
    let out = vpd(&["train", "--model", "gbt", "--features", "af-base", "--seed", "3", "--out", d]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(dir.join("model_gbt.json")).unwrap(), model_a);
    assert_eq!(fs::read(dir.join("report_gbt.json")).unwrap(), report_a);

    let out = vpd(&["stats", "--out", d]);
    assert_eq!(code(&out), 0);
    assert!(dir.join("stats.csv").exists());

    let out = vpd(&["report", "--report", dir.join("report_gbt.json").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("Testing CR for gbt (af-base)"));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn config_file_overrides_defaults_and_flags_win() {
    let dir = tmp("config");
    let d = dir.to_str().unwrap();
    let out = vpd(&["synth", "--healthy", "8", "--pathological", "8", "--seed", "11", "--out", d]);
    assert_eq!(code(&out), 0);
    let out = vpd(&["preprocess", "--out", d]);
    assert_eq!(code(&out), 0);
    let out = vpd(&["features", "--set", "af-base", "--out", d]);
    assert_eq!(code(&out), 0);
    let t = feasible_target(&dir, 2).to_string();
    let out = vpd(&["split", "--seed", "2", "--test-per-class", &t, "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // unknown config keys are rejected as usage errors
    let bad = dir.join("bad.json");
    fs::write(&bad, r#"{"tree_count": 5}"#).unwrap();
    let out = vpd(&[
        "train", "--model", "gbt", "--features", "af-base",
        "--config", bad.to_str().unwrap(), "--out", d,
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let good = dir.join("gbt.json");
    fs::write(&good, r#"{"n_estimators": 4}"#).unwrap();
    let out = vpd(&[
        "train", "--model", "gbt", "--features", "af-base",
        "--config", good.to_str().unwrap(), "--out", d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("model_gbt.json")).unwrap()).unwrap();
    assert_eq!(model["params"]["n_estimators"], 4);
    fs::remove_dir_all(dir).ok();
}
