use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "synthetic": {"domains": 3, "topics": 3, "examples_per_domain": 120, "seed": 2},
  "embed": {"dim": 8, "epochs": 1},
  "sentence": {"source": "universal", "skipgram": {"dim": 8, "epochs": 1}}
}"#;

fn domsel(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_domsel"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"meta": {"repeatz": 3}}"#).unwrap();
    let out = domsel(&dir.path().join("ws"), &["--config", cfg.to_str().unwrap(), "features"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("repeatz"), "{}", stderr(&out));
}

#[test]
fn bad_flag_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = domsel(dir.path(), &["features", "--nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_then_features_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let ws = dir.path().join("ws");
    let c = cfg.to_str().unwrap();
    let out = domsel(&ws, &["--config", c, "synth"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(ws.join("corpus/syn02.jsonl").exists());
    let out = domsel(&ws, &["features"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(ws.join("features/features.csv")).unwrap().lines().count(), 1 + 6);
    let again = domsel(&ws, &["features"]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert!(stdout(&again).starts_with("rebuilt 0 artifact(s)"), "{}", stdout(&again));
}

#[test]
fn ingest_jsonl_with_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("qa.jsonl");
    let rows: String = (0..30)
        .map(|i| format!("{{\"text_a\":\"question {i} about drives\",\"text_b\":\"answer {i}\",\"score\":{}}}\n", (i % 5) as f64))
        .collect();
    std::fs::write(&input, rows).unwrap();
    let ws = dir.path().join("ws");
    let args = ["ingest", "--in", input.to_str().unwrap(), "--name", "qa", "--binarize-threshold", "2.5"];
    let out = domsel(&ws, &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(ws.join("corpus/qa.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert!(stdout(&domsel(&ws, &args)).starts_with("rebuilt 0"));
}

#[test]
fn ingest_rejects_scores_without_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.jsonl");
    std::fs::write(&input, "{\"text_a\":\"a b\",\"text_b\":\"c\",\"score\":4.2}\n").unwrap();
    let out = domsel(&dir.path().join("ws"), &["ingest", "--in", input.to_str().unwrap(), "--name", "s"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}
