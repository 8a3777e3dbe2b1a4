use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pararnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pararnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn zero_epochs_emit_only_the_initial_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), r#"{"train": {"max_epochs": 0}}"#);
    let out = dir.path().join("run");
    let o = pararnn(&[
        "simulate",
        "--config",
        &cfg,
        "--scale",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let features = json(&out.join("features.json"));
    let snaps = features["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 1);
    assert_eq!(snaps[0]["epoch"], 0);
    assert_eq!(
        fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(),
        1
    );
    let resolved = json(&out.join("config.resolved.json"));
    assert_eq!(resolved["train"]["max_epochs"], 0);
    assert!(resolved["data"]["n"].as_u64().is_some());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("c.json"),
        r#"{"train": {"max_epochs": 2, "batch_size": 16}}"#,
    );
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = pararnn(&[
            "simulate",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--scale",
            "0.05",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        out
    };
    let (a, b, c) = (run("a", "3"), run("b", "3"), run("c", "4"));
    for file in [
        "metrics.jsonl",
        "features.json",
        "summary.json",
        "checkpoint.model",
        "config.resolved.json",
    ] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    assert_ne!(
        fs::read(a.join("metrics.jsonl")).unwrap(),
        fs::read(c.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn identity_matrix_gives_an_all_real_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(&dir.path().join("eye.txt"), "3 3\n1 0 0\n0 1 0\n0 0 1\n");
    let features = |strict: bool| {
        let out = dir.path().join(if strict { "strict" } else { "clustered" });
        let mut args = vec!["analyze", &m, "--out", out.to_str().unwrap()];
        if strict {
            args.push("--strict");
        }
        assert!(pararnn(&args).status.success());
        let reports = json(&out.join("features.json"))["reports"].as_array().unwrap().clone();
        assert_eq!(reports.len(), 1);
        let fs = reports[0]["report"]["features"].as_array().unwrap().clone();
        for f in &fs {
            assert_eq!(f["kind"], "R");
            assert_eq!(f["lambda"], 1.0);
        }
        fs.iter().map(|f| f["order"].as_u64().unwrap()).collect::<Vec<_>>()
    };
    // Clustering merges the repeated eigenvalue into one feature.
    assert_eq!(features(false), vec![3]);
    assert_eq!(features(true), vec![1, 1, 1]);
}

#[test]
fn lstm_checkpoint_reports_every_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("c.json"),
        r#"{"task": {"type": "adding", "t": 6, "n_train": 20, "n_val": 5, "n_test": 5},
            "model": {"cell": "lstm", "hidden": 4, "block_size": 2},
            "train": {"max_epochs": 1, "batch_size": 10}}"#,
    );
    let run = dir.path().join("train");
    assert!(pararnn(&["train", "--config", &cfg, "--out", run.to_str().unwrap()])
        .status
        .success());
    let summary = json(&run.join("summary.json"));
    assert_eq!(summary["iterations"], 2);
    let out = dir.path().join("an");
    let ckpt = run.join("checkpoint.model");
    let o = pararnn(&[
        "analyze",
        ckpt.to_str().unwrap(),
        "--strict",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let reports = json(&out.join("features.json"))["reports"].as_array().unwrap().clone();
    let names: Vec<&str> = reports.iter().map(|r| r["matrix"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 4);
    for r in &reports {
        assert_eq!(r["layer"], 0);
        assert_eq!(r["report"]["dim"], 4);
    }
}

#[test]
fn missing_csv_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("c.json"),
        r#"{"task": {"type": "csv", "path": "/definitely/not/here.csv", "target": "y", "window": 8, "horizon": 1}}"#,
    );
    let o = pararnn(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("here.csv"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), r#"{"train": {"max_epoch": 3}}"#);
    let o = pararnn(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_epoch"));
}

#[test]
fn sine_series_beats_the_constant_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("date,y\n");
    for i in 0..600 {
        let t = i as f64;
        csv.push_str(&format!(
            "2020-01-01T{:02}:{:02},{}\n",
            i / 60 % 24,
            i % 60,
            (0.3 * t).sin() + 0.5 * (0.05 * t).cos()
        ));
    }
    let data = write(&dir.path().join("series.csv"), &csv);
    let cfg = write(
        &dir.path().join("c.json"),
        &format!(
            r#"{{"task": {{"type": "csv", "path": "{data}", "target": "y", "window": 12, "horizon": 1}},
                "model": {{"cell": "rnn", "hidden": 8, "block_size": 2}},
                "train": {{"max_epochs": 30, "batch_size": 32, "learning_rate": 0.01}}}}"#
        ),
    );
    let out = dir.path().join("o");
    let o = pararnn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("summary.json"));
    let (mse, var) = (
        s["test_mse"].as_f64().unwrap(),
        s["test_target_variance"].as_f64().unwrap(),
    );
    assert!(mse < 0.1 * var, "mse {mse} variance {var}");
}

#[test]
fn arma_check_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = pararnn(&["arma-check", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let r = json(&out.join("arma_check.json"));
    assert_eq!((r["passed"].as_u64(), r["failed"].as_u64()), (Some(100), Some(0)));
}
