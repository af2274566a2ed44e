use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn run(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skel2vec"))
        .args(args)
        .env("SKEL2VEC_OUT", root)
        .output()
        .expect("spawn skel2vec")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = run(root, args);
    assert!(
        out.status.success(),
        "skel2vec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["--help"]).status.success());
    assert!(run(dir.path(), &["eval", "--help"]).status.success());
    assert_eq!(run(dir.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(
        run(dir.path(), &["eval", "--protocol", "zero-shot", "--ckpt", "x", "--data", "y"]).status.code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["pretrain", "--data", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    ok(dir.path(), &["data", "gen", "--out", "d", "--classes", "2", "--per-class", "4"]);
    let out = run(dir.path(), &["data", "gen", "--out", "d2", "--set", "clases=3"]);
    assert_eq!(out.status.code(), Some(1), "unknown config key must be rejected");
}

#[test]
fn smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let start = Instant::now();
    ok(root, &["data", "gen", "--out", "data", "--classes", "4", "--per-class", "12", "--seed", "3"]);
    ok(
        root,
        &["pretrain", "--data", &root.join("data").to_string_lossy(), "--preset", "toy", "--epochs", "2", "--out", "pt"],
    );
    let data = root.join("data");
    let ckpt = root.join("pt/checkpoint");
    let stdout = ok(
        root,
        &[
            "eval", "--protocol", "linear", "--ckpt", &ckpt.to_string_lossy(), "--data", &data.to_string_lossy(),
            "--out", "lin", "--epochs", "5",
        ],
    );
    assert!(stdout.contains("linear accuracy"));
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 180.0, "pipeline took {elapsed:.1}s");

    let report = json(&root.join("lin/report.json"));
    let acc = report["accuracy_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["checkpoint_hash"], report["encoder_hash_after"]);
    let csv = fs::read_to_string(root.join("lin/report.csv")).unwrap();
    assert!(csv.starts_with("protocol,"));
    for dir in ["data", "pt", "lin"] {
        let rec = json(&root.join(dir).join("run.json"));
        assert!(rec["input_hash"].as_str().unwrap().len() == 64);
    }
    let metrics = fs::read_to_string(root.join("pt/metrics.jsonl")).unwrap();
    assert!(metrics.lines().count() >= 1);

    let summary = ok(root, &["inspect", &ckpt.to_string_lossy()]);
    assert!(summary.contains("teacher hash"));
    let manifest: Value = serde_json::from_str(&ok(root, &["inspect", &ckpt.to_string_lossy(), "--json"])).unwrap();
    assert_eq!(manifest["model"]["enc_layers"], 4);

    ok(root, &["mask", "stats", "--data", &data.to_string_lossy(), "--preset", "toy", "--out", "ms"]);
    assert!(root.join("ms/mask_stats.json").exists());
    assert!(root.join("ms/joint_frequency.csv").exists());
}

#[test]
fn reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(root, &["data", "gen", "--out", "data", "--classes", "3", "--per-class", "6", "--seed", "5"]);
    let data = root.join("data").to_string_lossy().into_owned();
    for out in ["a", "b"] {
        ok(root, &["pretrain", "--data", &data, "--preset", "toy", "--epochs", "1", "--seed", "7", "--out", out]);
    }
    let hash = |d: &str| json(&root.join(d).join("checkpoint/manifest.json"))["teacher_hash"].clone();
    assert_eq!(hash("a"), hash("b"));
    assert_eq!(
        fs::read(root.join("a/checkpoint/weights.bin")).unwrap(),
        fs::read(root.join("b/checkpoint/weights.bin")).unwrap()
    );
    assert_eq!(json(&root.join("a/run.json"))["input_hash"], json(&root.join("b/run.json"))["input_hash"]);
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("gen.cfg");
    fs::write(&cfg, "classes = 3\nper_class = 2\nseed = 11\n").unwrap();
    ok(root, &["data", "gen", "--out", "d", "--config", &cfg.to_string_lossy(), "--per-class", "4"]);
    let rec = json(&root.join("d/run.json"));
    assert_eq!(rec["config"]["classes"], 3);
    assert_eq!(rec["config"]["per_class"], 4);
    assert_eq!(rec["seeds"][0], 11);
}
