//! End-to-end use of the `notematch` binary.

use std::path::Path;
use std::process::{Command, Output};

fn notematch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_notematch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn notematch")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL_RUN: &str = r#"{
  "corpus": {"path": "corpus.jsonl"},
  "vocab": "vocab.txt",
  "split": {"seeds": [1, 2]},
  "settings": [{"name": "h16", "embedder": {"kind": "hash", "dim": 16, "granularity": "token", "seed": 4}}],
  "aggregations": ["avg", "mean_max"],
  "classifiers": [{"kind": "lr"}, {"kind": "boost", "rounds": 20}],
  "output_dir": "out"
}"#;

fn generate(dir: &Path, name: &str) {
    ok(&notematch(
        dir,
        &["generate", "--seed", "9", "--patients", "40", "--out", name, "--vocab-out", "vocab.txt"],
    ));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "a.jsonl");
    generate(dir.path(), "b.jsonl");
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
}

#[test]
fn stages_and_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "corpus.jsonl");

    ok(&notematch(d, &["cohort", "--in", "corpus.jsonl", "--out", "clean.jsonl", "--report", "cohort.json"]));
    let cohort: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("cohort.json")).unwrap()).unwrap();
    assert!(cohort.is_object());

    ok(&notematch(d, &["pairs", "--corpus", "clean.jsonl", "--seed", "3", "--out", "pairs.jsonl"]));
    let pairs = std::fs::read_to_string(d.join("pairs.jsonl")).unwrap();
    assert!(pairs.lines().count() > 0);

    let stats = ok(&notematch(d, &["tokenize", "--vocab", "vocab.txt", "--in", "clean.jsonl", "--stats"]));
    assert!(stats.contains("±"), "{stats}");

    std::fs::write(d.join("run.json"), SMALL_RUN).unwrap();
    ok(&notematch(d, &["--config", "run.json", "embed", "--out", "h16.nem"]));
    assert!(d.join("h16.nem").exists());

    ok(&notematch(d, &["--config", "run.json", "run"]));
    for f in ["report.json", "report.txt", "cohort_report.json", "artifacts.json"] {
        assert!(d.join("out").join(f).exists(), "missing {f}");
    }
    let table = ok(&notematch(d, &["report", "--in", "out/report.json", "--format", "table"]));
    assert!(table.contains("Aggreg.") && table.contains("BOOST"), "{table}");
    assert_eq!(table.trim(), std::fs::read_to_string(d.join("out/report.txt")).unwrap().trim());
    let json = ok(&notematch(d, &["report", "--in", "out/report.json", "--format", "json"]));
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(notematch(d, &["--help"]).status.code(), Some(0));
    assert_eq!(notematch(d, &["--config", "missing.json", "run"]).status.code(), Some(1));
    assert_eq!(notematch(d, &["no-such-command"]).status.code(), Some(1));
    std::fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(notematch(d, &["cohort", "--in", "bad.jsonl"]).status.code(), Some(2));
}
