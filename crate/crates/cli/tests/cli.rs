use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_invariaudit"));
    c.env_remove("INVARIAUDIT_CACHE_DIR");
    c
}

fn echo_scorer() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/echo_scorer.py")
}

fn write_config(dir: &Path, doc: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    p
}

fn small(dir: &Path) -> Value {
    json!({
        "seed": 11,
        "input": {"synthetic": {"n_images": 16, "seed": 11}},
        "families": ["vertical_flip", "rotation", "economic"],
        "scorers": [{"kind": "mock", "id": "m", "preset": "combined"}],
        "rrf": {"n_boot": 1000},
        "stats": {"n_resamples": 1000},
        "output_dir": dir.join("out"),
    })
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = small(dir.path());
    doc.as_object_mut().unwrap().remove("seed");
    let cfg = write_config(dir.path(), &doc);
    let o = run(&["curate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    let mut doc = small(dir.path());
    doc["rrf"]["nboot"] = json!(5);
    let cfg = write_config(dir.path(), &doc);
    let o = run(&["curate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rrf"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), &small(dir.path()));
    let o = run(&["curate", "--config", cfg.to_str().unwrap(), "--rrf.n_boot=5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rrf.n_boot"), "{}", stderr(&o));
}

#[test]
fn handshake_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = small(dir.path());
    doc["scorers"] = json!([{
        "kind": "external",
        "bridge": {"command": ["python3", echo_scorer(), "bad_handshake"], "handshake_timeout_secs": 10}
    }]);
    let cfg = write_config(dir.path(), &doc);
    let o = run(&["score", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    // Nothing was materialized before the handshake.
    assert!(!dir.path().join("out/variants").exists());
}

#[test]
fn failure_budget_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let o = run(&["synth", "--out", corpus.to_str().unwrap(), "--n-images", "20", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..5 {
        std::fs::remove_file(corpus.join(format!("images/syn{i:05}.png"))).unwrap();
    }
    let mut doc = small(dir.path());
    doc["input"] = json!({"manifests": [corpus.join("detections.jsonl")]});
    let cfg = write_config(dir.path(), &doc);
    let o = run(&["score", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("failure budget"), "{}", stderr(&o));
    let o = run(&["score", "--config", cfg.to_str().unwrap(), "--max-item-failure-rate", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn stages_resume_and_empty_reports_keep_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small(dir.path()));
    let o = run(&["curate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports = dir.path().join("out/reports");
    let cells = std::fs::read_to_string(reports.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1);
    assert!(cells.starts_with("scorer,dataset,family,level,n,"));
    let rrf = std::fs::read_to_string(reports.join("rrf_report.csv")).unwrap();
    assert_eq!(rrf.trim_end(), "scorer,family,d,rrf,ci_lo,ci_hi,d_raw,exhaustive,n_items,n_boot,seed,monotonicity_flag");

    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read_to_string(reports.join("cells.csv")).unwrap();
    assert!(first.lines().count() > 1);
    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let log: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/run_log.json")).unwrap()).unwrap();
    let stages = log["stages"].as_array().unwrap();
    assert!(stages.len() >= 5);
    assert!(stages.iter().all(|s| s["cache_hit"] == json!(true)), "{stages:?}");
    assert_eq!(std::fs::read_to_string(reports.join("cells.csv")).unwrap(), first);

    // A changed stats seed recomputes analysis only.
    let o = run(&["analyze", "--config", cfg.to_str().unwrap(), "--stats.seed=12"]);
    assert!(o.status.success());
    let log: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/run_log.json")).unwrap()).unwrap();
    let hit = |name: &str| log["stages"].as_array().unwrap().iter().find(|s| s["stage"] == name).unwrap()["cache_hit"].clone();
    assert_eq!(hit("score"), json!(true));
    assert_eq!(hit("analyze"), json!(false));
}

#[test]
fn external_scorer_runs_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = small(dir.path());
    doc["scorers"] = json!([
        {"kind": "external", "bridge": {"command": ["python3", echo_scorer(), "ok"]}},
        {"kind": "mock", "id": "ref", "preset": "reference_a", "role": "reference"}
    ]);
    let cfg = write_config(dir.path(), &doc);
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = std::fs::read_to_string(dir.path().join("out/reports/scores.csv")).unwrap();
    assert!(scores.lines().any(|l| l.starts_with("echo,")));
    // Every score went through the cache.
    let cache = std::fs::read_to_string(dir.path().join("out/cache/scores.jsonl")).unwrap();
    assert!(cache.lines().any(|l| l.contains("\"echo\"")));
}
