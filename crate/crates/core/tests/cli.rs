use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chargenet")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SPEC: &str = r#"{
    "groups": 1, "charges_per_group": 2, "background_vocab": 12,
    "disc_tokens_per_charge": 2, "fact_len": [6, 10],
    "examples_per_charge": 10, "seed": 4
}"#;

const CONFIG: &str = r#"{
    "hidden_size": 8, "heads": 2, "batch_size": 4, "learning_rate": 0.01,
    "window_size": 3, "epochs": 3, "patience": 3, "seed": 1
}"#;

/// Synthesizes a corpus into `dir/corpus` and returns its case and tree paths.
fn synth(dir: &Path) -> (String, String) {
    let spec = write(&dir.join("spec.json"), SPEC);
    let corpus = dir.join("corpus");
    let out = run(&["synth", "--spec", &spec, "--out", corpus.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cases = corpus.join("cases.jsonl");
    let tree = corpus.join("knowledge.json");
    assert_eq!(fs::read_to_string(&cases).unwrap().lines().count(), 20);
    (cases.to_str().unwrap().into(), tree.to_str().unwrap().into())
}

#[test]
fn synth_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (cases, tree) = synth(dir.path());
    let config = write(&dir.path().join("config.json"), CONFIG);
    let out_dir = dir.path().join("run");
    let trained = json(&run(&[
        "train", "--config", &config, "--data", &cases, "--knowledge", &tree, "--out", out_dir.to_str().unwrap(),
    ]));
    assert_eq!(trained["epochs_run"], 3);
    let log = fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "val_acc", "val_mr", "val_maf1", "val_mif1"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let ckpt = out_dir.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let report = json(&run(&["eval", "--checkpoint", ckpt, "--data", &cases, "--split", "test"]));
    assert_eq!(report["accuracy"], trained["test"]["accuracy"]);

    let pred = json(&run(&["predict", "--checkpoint", ckpt, "--fact", "kw0x0x0 bg0x1 bg0x2"]));
    let total: f64 = pred["probabilities"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    let beta: f64 = pred["attention"].as_array().unwrap().iter().map(|p| p[1].as_f64().unwrap()).sum();
    assert!((beta - 1.0).abs() < 1e-6);

    let empty = run(&["predict", "--checkpoint", ckpt, "--fact", "  "]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn ablation_flags_change_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let (cases, tree) = synth(dir.path());
    let config = write(&dir.path().join("config.json"), CONFIG);
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train", "--config", &config, "--data", &cases, "--knowledge", &tree, "--out",
        out_dir.to_str().unwrap(), "--no-knowledge", "--fact-encoder", "bilstm",
    ]);
    json(&out);
    let ckpt = out_dir.join("model.ckpt");
    let pred = json(&run(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--fact", "bg0x1 bg0x2"]));
    assert!(pred["attention"].is_null());
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (cases, tree) = synth(dir.path());
    let config = write(&dir.path().join("config.json"), CONFIG);
    let out_dir = dir.path().join("run");
    let out_dir = out_dir.to_str().unwrap();

    let mut text = fs::read_to_string(&cases).unwrap();
    text.push_str("{\"fact\": \"something odd\", \"charge\": \"arson\"}\n");
    let bad_cases = write(&dir.path().join("bad.jsonl"), &text);
    let out = run(&["train", "--config", &config, "--data", &bad_cases, "--knowledge", &tree, "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 21"));

    let bad_config = write(&dir.path().join("bad.json"), r#"{"hidden_size": 10, "heads": 3}"#);
    let out = run(&["train", "--config", &bad_config, "--data", &cases, "--knowledge", &tree, "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["eval", "--checkpoint", &cases, "--data", &cases]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (cases, tree) = synth(dir.path());
    let config = write(
        &dir.path().join("config.json"),
        r#"{"hidden_size": 8, "heads": 2, "batch_size": 4, "learning_rate": 1e30, "epochs": 5, "seed": 1}"#,
    );
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--config", &config, "--data", &cases, "--knowledge", &tree, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
