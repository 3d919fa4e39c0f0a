//! The `scorecl` binary end to end on small runs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scorecl_core::config::parse_config;

fn scorecl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scorecl")).args(args).current_dir(cwd).output().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "stderr must be one line: {text:?}");
    text.trim_end().to_string()
}

const SMALL: &str = r#"{
  "seed": 3,
  "dataset": {"kind": "synth", "n": 64, "test_n": 32, "resolution": 16},
  "score": {"epochs": 1, "batch": 32, "widths": [4, 4, 4], "levels": 3, "sigma_min": 0.1},
  "cl": {"epochs": 2, "batch": 16},
  "aug": {"view_size": 16}
}"#;

fn small_config(dir: &Path) {
    fs::write(dir.join("small.json"), SMALL).unwrap();
}

fn assert_echo(dir: &Path) {
    let path = dir.join("resolved_config.json");
    let cfg = parse_config(&path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), cfg.to_json() + "\n");
}

#[test]
fn synth_writes_splits_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = scorecl(&["synth", "--n", "200", "--resolution", "32", "--classes", "4", "--seed", "7", "--out", "d/"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = tmp.path().join("d");
    for f in ["train.raw", "test.raw", "manifest.json", "resolved_config.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"][0]["images"], 200);
    assert_eq!(manifest["class_count"], 4);
    assert_echo(&d);
    // the raw format stores 8-bit pixels
    let written = fs::read(d.join("train.raw")).unwrap();
    let direct = scorecl_core::data::raw_bytes(&scorecl_core::data::synth_shapes(200, 32, 4, 7).unwrap()).unwrap();
    assert!(written == direct);
}

#[test]
fn score_mode_without_checkpoint_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = scorecl(&["train-cl", "--seed", "1", "--weight-mode", "score", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("scorecl: usage:") && line.contains("--score"), "{line}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn usage_data_and_divergence_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    small_config(tmp.path());

    let out = scorecl(&["train-cl", "--bogus", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("--bogus"));

    let out = scorecl(&["train-score", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("--seed"));

    fs::write(tmp.path().join("typo.json"), r#"{"seed": 1, "dataset": {"kind": "synth"}, "cl": {"lr_sched": 1}}"#).unwrap();
    let out = scorecl(&["train-cl", "--config", "typo.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("lr_sched"));

    let out = scorecl(&["train-cl", "--seed", "1", "--data", "missing", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("scorecl: data:"));

    fs::write(tmp.path().join("garbage.ckpt"), b"not a checkpoint").unwrap();
    let out = scorecl(&["eval-knn", "--config", "small.json", "--encoder", "garbage.ckpt", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("magic"));

    let out = scorecl(&["train-cl", "--config", "small.json", "--lr", "1e30", "--out", "div"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stderr_line(&out).starts_with("scorecl: divergence:"));
}

#[test]
fn pipeline_from_synth_to_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    small_config(p);
    let ok = |args: &[&str]| {
        let out = scorecl(args, p);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["synth", "--config", "small.json", "--out", "data"]);
    ok(&["train-score", "--config", "small.json", "--data", "data", "--out", "score"]);
    assert_eq!(fs::read_to_string(p.join("score/score_metrics.csv")).unwrap().lines().count(), 2);
    ok(&["train-cl", "--config", "small.json", "--data", "data", "--score", "score/score.ckpt", "--weight-mode", "score", "--out", "cl"]);
    for f in ["metrics.csv", "encoder_last.ckpt", "encoder_best.ckpt"] {
        assert!(p.join("cl").join(f).exists(), "{f}");
    }
    ok(&["eval-knn", "--config", "small.json", "--data", "data", "--encoder", "cl/encoder_last.ckpt", "--out", "knn"]);
    let knn = fs::read_to_string(p.join("knn/knn.csv")).unwrap();
    assert!(knn.starts_with("class,k,metric,n_test,accuracy\nall,5,cosine,32,"), "{knn}");
    ok(&["eval-linear", "--config", "small.json", "--data", "data", "--encoder", "cl/encoder_last.ckpt", "--out", "lin"]);
    assert!(p.join("lin/linear.csv").exists());

    for (kind, rows) in [("curve", 5), ("hist", 50), ("pair_grid", 25), ("contour", 25)] {
        let out = format!("an_{kind}");
        ok(&[
            "analyze", "--config", "small.json", "--data", "data", "--score", "score/score.ckpt", "--kind", kind,
            "--transform-a", "brightness", "--transform-b", "contrast", "--steps", "5", "--images", "4", "--out", &out,
        ]);
        let table = fs::read_to_string(p.join(&out).join(format!("analysis_{kind}.csv"))).unwrap();
        assert_eq!(table.lines().count(), rows + 1, "{kind}");
        assert_echo(&p.join(&out));
    }
    for d in ["score", "cl", "knn", "lin"] {
        assert_echo(&p.join(d));
    }
}

#[test]
fn compare_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    small_config(p);
    for out in ["a", "b"] {
        let o = scorecl(&["compare", "--config", "small.json", "--methods", "simclr", "--weight-modes", "constant,score", "--out", out], p);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read_to_string(p.join("a/compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,weight_mode,final_loss,knn_accuracy");
    assert!(lines[1].starts_with("simclr,constant,") && lines[2].starts_with("simclr,score,"));
    for f in [
        "compare.csv",
        "score_metrics.csv",
        "score.ckpt",
        "simclr_constant/metrics.csv",
        "simclr_score/metrics.csv",
        "simclr_score/encoder_last.ckpt",
        "simclr_score/resolved_config.json",
    ] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = scorecl(&["--help"], tmp.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("compare"));
}
