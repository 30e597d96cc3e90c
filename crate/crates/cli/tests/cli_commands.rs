use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crcsf_cli::config::{canonical_hash, ExperimentConfig};
use crcsf_cli::io::RunManifest;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crcsf"))
}

fn tiny(m: usize, k: usize, n: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::head_on_default();
    c.calibration.m = m;
    c.calibration.k = k;
    c.dynamics.horizon_steps = n;
    c.evaluation.n_trials = 4;
    c.margin_model.kind = crcsf::margin_model::ModelKind::Table;
    if let crcsf_cli::config::LipschitzSection::Estimate { n_samples, .. } = &mut c.lipschitz {
        *n_samples = 200;
    }
    c
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.in.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap()
}

fn to_value(c: &ExperimentConfig) -> Value {
    serde_json::to_value(c).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_alpha_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = to_value(&tiny(2, 2, 5));
    v["crc"].as_object_mut().unwrap().remove("alpha");
    let cfg = write_config(dir.path(), &v);
    let o = run(&["calibrate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn tiny_calibration_writes_ten_training_pairs_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &to_value(&tiny(2, 2, 5)));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["calibrate"], &cfg, out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let labels = std::fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 5);
    let ts_a = std::fs::read(a.join("training_set.csv")).unwrap();
    assert_eq!(ts_a, std::fs::read(b.join("training_set.csv")).unwrap());
    assert_eq!(String::from_utf8(ts_a).unwrap().lines().count(), 1 + 10);
    assert!(a.join("certificates_batch_0.csv").exists());

    let manifest = RunManifest::load(&a);
    assert!(manifest.verify(&a).is_empty());
    let copied: Value = serde_json::from_str(&std::fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(manifest.runs["calibrate"].config_hash, canonical_hash(&copied));
}

#[test]
fn training_requires_a_training_set_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &to_value(&tiny(4, 2, 10)));
    let out = dir.path().join("out");
    let o = run(&["train-margin"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    assert!(run(&["calibrate"], &cfg, &out).status.success());
    assert!(run(&["train-margin"], &cfg, &out).status.success());
    let first = std::fs::read(out.join("margin_model.json")).unwrap();
    assert!(run(&["train-margin"], &cfg, &out).status.success());
    assert_eq!(first, std::fs::read(out.join("margin_model.json")).unwrap());
}

#[test]
fn corrupt_training_row_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &to_value(&tiny(4, 2, 10)));
    let out = dir.path().join("out");
    assert!(run(&["calibrate"], &cfg, &out).status.success());
    let p = out.join("training_set.csv");
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen(',', ",x", 3);
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    let o = run(&["train-margin"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 5"), "{}", stderr(&o));
}

#[test]
fn tight_loss_bound_fails_calibration_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(4, 2, 10);
    c.crc.loss_bound = Some(1e-9);
    let cfg = write_config(dir.path(), &to_value(&c));
    let o = run(&["calibrate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn online_variant_without_model_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &to_value(&tiny(4, 2, 10)));
    let out = dir.path().join("out");
    assert!(run(&["calibrate"], &cfg, &out).status.success());
    let o = run(&["evaluate", "--variants", "online_crc_sf"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn evaluate_single_variant_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &to_value(&tiny(4, 2, 20)));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["evaluate", "--variants", "cbf_qp", "--n-trials", "6", "--seed", "5"], &cfg, out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().contains(",cbf_qp,6,"));
    assert_eq!(std::fs::read(a.join("episodes.csv")).unwrap(), std::fs::read(b.join("episodes.csv")).unwrap());
    assert_eq!(std::fs::read_to_string(a.join("episodes.csv")).unwrap().lines().count(), 7);
}

#[test]
fn trajectories_are_dumped_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &to_value(&tiny(4, 2, 12)));
    let out = dir.path().join("out");
    let o = run(&["evaluate", "--variants", "cbf_qp", "--n-trials", "2", "--dump-trajectories"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let found: Vec<_> = walk(&out).into_iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")).collect();
    assert_eq!(found.len(), 2);
    let text = std::fs::read_to_string(&found[0]).unwrap();
    assert_eq!(text.lines().count(), 12);
    for line in text.lines() {
        let _: Value = serde_json::from_str(line).unwrap();
    }
}

#[test]
fn unknown_variant_and_unknown_field_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &to_value(&tiny(4, 2, 10)));
    let o = run(&["evaluate", "--variants", "mppi"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let mut v = to_value(&tiny(4, 2, 10));
    v["barrier"]["radius"] = Value::from(1.0);
    let cfg = write_config(dir.path(), &v);
    let o = run(&["calibrate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("barrier"), "{}", stderr(&o));
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
