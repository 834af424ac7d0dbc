use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_physprompt");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a config whose four backends share one mock script.
fn mock_config(dir: &Path, script: Value) -> String {
    fs::write(dir.join("script.json"), script.to_string()).unwrap();
    let mock = json!({"kind": "mock", "endpoint": "script.json"});
    let cfg = json!({
        "backends": {"reasoner": mock, "generator": mock, "captioner": mock, "evaluator": mock},
        "policy": {"convergence_epsilon": 0.0}
    });
    fs::write(dir.join("config.json"), cfg.to_string()).unwrap();
    "config.json".into()
}

fn only_session(root: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

fn ledgers(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(root)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path().join("ledger.csv");
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn refine_writes_a_four_round_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(dir.path(), json!({"refine_suffixes": ["slowly", "on wet grass"]}));
    let out = run(
        dir.path(),
        &["refine", "--config", &cfg, "--prompt", "a ball rolls down a hill", "--max-rounds", "4"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    for r in 1..=4 {
        assert!(text.contains(&format!("round {r}: pc ")), "{text}");
    }
    assert!(text.contains("stop: round_cap"));
    assert!(text.contains("final prompt: a ball rolls down a hill slowly on wet grass"));

    let session = only_session(&dir.path().join("sessions"));
    let rounds = fs::read_dir(session.join("rounds")).unwrap().count();
    assert_eq!(rounds, 5, "four finished rounds plus the pending one");
    let config: Value =
        serde_json::from_str(&fs::read_to_string(session.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["policy"]["max_rounds"], 4);
    // the flag value is echoed into the effective config
    assert_eq!(config["effective_config"]["policy"]["max_rounds"], 4);
    assert_eq!(config["effective_config"]["prompt"], "a ball rolls down a hill");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["refine", "--config", "absent.json", "--prompt", "a ball"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("hint:"), "{}", stderr(&out));
}

#[test]
fn zero_rounds_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["refine", "--prompt", "a ball", "--rounds", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("max_rounds"), "{}", stderr(&out));
    assert!(!dir.path().join("sessions").exists());
}

#[test]
fn bench_reports_and_rerun_skips_finished_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = fixture("three_entries.jsonl");
    let args = [
        "bench",
        "--dataset",
        dataset.to_str().unwrap(),
        "--parallelism",
        "2",
        "--max-rounds",
        "2",
    ];
    let first = run(dir.path(), &args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    for name in ["round_1.md", "round_1.csv", "round_2.md", "round_2.csv", "rounds.md", "rounds.csv"] {
        assert!(dir.path().join("reports").join(name).is_file(), "{name}");
    }
    let round1 = fs::read_to_string(dir.path().join("reports/round_1.md")).unwrap();
    assert!(round1.contains("| overall | 1 | 3 |"), "{round1}");

    // any backend call would append a ledger row
    let before = ledgers(&dir.path().join("sessions"));
    assert_eq!(before.len(), 3);
    let second = run(dir.path(), &args);
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    assert!(stderr(&second).contains("3 finished earlier"), "{}", stderr(&second));
    assert_eq!(ledgers(&dir.path().join("sessions")), before);

    // report reproduces the bench's round file
    let report = run(dir.path(), &["report", "--round", "1"]);
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(stdout(&report), round1);
    let csv = run(dir.path(), &["report", "--round", "1", "--format", "csv"]);
    assert_eq!(
        stdout(&csv),
        fs::read_to_string(dir.path().join("reports/round_1.csv")).unwrap()
    );

    let beyond = run(dir.path(), &["report", "--round", "9"]);
    assert_eq!(beyond.status.code(), Some(0));
    assert!(stderr(&beyond).contains("warning"));
    assert!(stdout(&beyond).contains("Excluded 3 session(s) without round 9."));
}

#[test]
fn bench_schema_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = fixture("missing_prompt.jsonl");
    let out = run(dir.path(), &["bench", "--dataset", dataset.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn report_on_empty_root_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["report", "--session-root", "nothing-here"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains("no sessions to aggregate"));
}

#[test]
fn backend_failure_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(
        dir.path(),
        json!({"failures": [{"op": "caption", "round": 2, "message": "captioner offline"}]}),
    );
    let out = run(
        dir.path(),
        &["refine", "--config", &cfg, "--prompt", "a cup of water tips over", "--max-rounds", "3"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("captioner offline"));
    let session = only_session(&dir.path().join("sessions"));
    let id = session.file_name().unwrap().to_str().unwrap().to_string();

    // the backend is back
    let cfg = mock_config(dir.path(), json!({}));
    let out = run(dir.path(), &["resume", &id, "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("round 3: pc "));
    assert!(stdout(&out).contains("stop: round_cap"));

    let again = run(dir.path(), &["resume", &id, "--config", &cfg]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("already finished"));
}
