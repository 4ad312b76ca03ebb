use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hvan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hvan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// A run small enough to train in seconds.
fn write_config(dir: &Path) -> String {
    let cfg = json!({
        "cases": 10,
        "model": { "input_size": [32, 32, 32], "stage_channels": [4, 8, 16, 32] },
        "train": { "epochs": 1, "batch_size": 4, "lr": 1e-3 }
    });
    let path = dir.join("run.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn synth_train_eval_cam_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).display().to_string();
    let config = write_config(dir.path());
    ok(&["synth-data", "--config", &config, "--out", &d("data")]);
    let manifest = d("data/manifest.csv");
    let train_out = ok(&["train", "--config", &config, "--manifest", &manifest, "--out", &d("run")]);
    assert!(train_out.contains("run digest"));
    for f in ["checkpoint.bin", "train_log.csv", "config.json", "metrics.json"] {
        assert!(dir.path().join("run").join(f).is_file(), "{f}");
    }

    let eval = ok(&["eval", "--manifest", &manifest, "--checkpoint", &d("run/checkpoint.bin"), "--out", &d("m.json")]);
    let report: Value = serde_json::from_str(&eval).unwrap();
    for key in ["auc", "f1", "accuracy", "sensitivity", "specificity", "tp", "fp", "tn", "fn"] {
        assert!(report.get(key).is_some(), "{key} missing from {report}");
    }
    assert_eq!(report["tp"].as_u64().unwrap() + report["fp"].as_u64().unwrap() + report["tn"].as_u64().unwrap() + report["fn"].as_u64().unwrap(), 2);
    let saved: Value = serde_json::from_str(&fs::read_to_string(d("m.json")).unwrap()).unwrap();
    assert_eq!(saved, report);

    ok(&["cam", "--checkpoint", &d("run/checkpoint.bin"), "--manifest", &manifest, "--case", "case0001", "--stage", "2", "--out", &d("cam")]);
    for f in ["case0001_cam_t.raw", "case0001_cam_t.json", "case0001_cam_s.raw", "case0001_cam_s.json"] {
        assert!(dir.path().join("cam").join(f).is_file(), "{f}");
    }
    let missing = hvan(&["cam", "--checkpoint", &d("run/checkpoint.bin"), "--manifest", &manifest, "--case", "nope", "--out", &d("cam")]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn ablation_grid_is_one_csv_of_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).display().to_string();
    let config = write_config(dir.path());
    ok(&["synth-data", "--config", &config, "--out", &d("data")]);
    ok(&["ablate", "--config", &config, "--manifest", &d("data/manifest.csv"), "--out", &d("abl")]);
    let mut reader = csv::Reader::from_path(dir.path().join("abl/ablation.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["config", "transverse", "sagittal", "iva", "cva", "hvaf", "auc", "f1", "accuracy", "sensitivity", "specificity"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let labels: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(labels, ["TV", "TV+IVA", "SV", "SV+IVA", "TV+SV", "TV+SV+IVA", "TV+SV+IVA+CVA", "TV+SV+IVA+CVA+HVAF"]);
    for r in &rows {
        // a metric with a zero denominator is left blank
        for m in 6..11 {
            assert!(r[m].is_empty() || (0.0..=1.0).contains(&r[m].parse::<f64>().unwrap()), "{r:?}");
        }
    }
}

#[test]
fn seed_flag_changes_the_run_digest() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).display().to_string();
    let config = write_config(dir.path());
    ok(&["synth-data", "--config", &config, "--out", &d("data")]);
    let digest = |seed: &str, out: &str| {
        let text = ok(&["train", "--config", &config, "--seed", seed, "--manifest", &d("data/manifest.csv"), "--out", &d(out)]);
        text.lines().find_map(|l| l.strip_prefix("run digest ")).unwrap().to_string()
    };
    let (a, b, c) = (digest("1", "r1"), digest("2", "r2"), digest("1", "r3"));
    assert_ne!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.len(), 16);
    assert_eq!(fs::read(d("r1/checkpoint.bin")).unwrap(), fs::read(d("r3/checkpoint.bin")).unwrap());
}

#[test]
fn usage_and_configuration_errors_exit_with_two() {
    assert_eq!(hvan(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(hvan(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"lr": -1.0}}"#).unwrap();
    let out = hvan(&["train", "--config", &bad.display().to_string(), "--manifest", "x.csv", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&bad, r#"{"unknown_field": 1}"#).unwrap();
    let out = hvan(&["synth-data", "--config", &bad.display().to_string(), "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_field"));
    let missing = hvan(&["eval", "--manifest", "nope.csv", "--checkpoint", "nope.bin"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(hvan(&["--help"]).status.success());
}
