use std::path::Path;
use std::process::{Command, Output};

fn kdad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"synth": {"n_entities": 10, "n_relations": 3, "n_triples": 24, "n_samples": 40},
    "model": {"hidden": 8, "embedding": 8},
    "train": {"epochs": 1, "num_task": 1}}"#;

#[test]
fn unknown_config_key_is_named_and_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"epochs": 2, "learning_rate": 0.1}}"#).unwrap();
    let out = kdad(&["synth", "--config", &s(&cfg), "--out", &s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate"), "{err}");
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = s(&tmp.path().join("missing.jsonl"));
    let out = kdad(&["train", "--mode", "maml", "--corpus", &missing, "--graph", &missing, "--out", &s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_without_corpus_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kdad(&["train", "--out", &s(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn pipeline_writes_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("cfg.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = root.join("data");
    let run = root.join("run");
    assert!(kdad(&["synth", "--config", &s(&cfg), "--seed", "3", "--out", &s(&data)]).status.success());
    let corpus = s(&data.join("corpus.jsonl"));
    let graph = s(&data.join("graph.json"));
    let out = kdad(&[
        "train", "--config", &s(&cfg), "--seed", "3", "--corpus", &corpus, "--graph", &graph,
        "--out", &s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.json", "split.json", "loss.csv", "run_config.json", "train.jsonl", "test.jsonl"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,bucket,split,mode,loss,ppl"));

    let checkpoint = s(&run.join("checkpoint.json"));
    let test = s(&run.join("test.jsonl"));
    let eval = root.join("eval");
    let out = kdad(&["eval", "--checkpoint", &checkpoint, "--corpus", &test, "--graph", &graph, "--out", &s(&eval)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    for key in ["bleu", "ppl", "distinct_1", "kw_acc", "generated_kw_recall"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert!(report["ppl"].as_f64().unwrap() > 1.0);

    let gen = root.join("gen");
    let out = kdad(&["generate", "--checkpoint", &checkpoint, "--corpus", &test, "--graph", &graph, "--out", &s(&gen)]);
    assert!(out.status.success());
    let lines = std::fs::read_to_string(gen.join("generations.jsonl")).unwrap();
    let expected = std::fs::read_to_string(run.join("test.jsonl")).unwrap().lines().count();
    assert_eq!(lines.lines().count(), expected);
}
