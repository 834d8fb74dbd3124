use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn streamforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamforge"))
        .args(args)
        .env_remove("STREAMFORGE_SEED")
        .output()
        .expect("binary runs")
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name).display().to_string();
    let mut args = vec!["gen", "--shape", "zipf:1.1", "--n", "16", "--m", "400", "--seed", "3", "--out", &out];
    args.extend_from_slice(extra);
    let o = streamforge(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_writes_stream_and_exact_answers() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "s.txt", &["--deletions", "forget", "--target-alpha", "0.25"]);
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(format!("{path}.oracle.json")).unwrap()).unwrap();
    assert!((sidecar["alpha"].as_f64().unwrap() - 0.25).abs() <= 0.05);

    let o = streamforge(&["oracle", "--stream", &path]);
    assert!(o.status.success());
    let fresh: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(fresh["fp"], sidecar["fp"]);
    assert_eq!(fresh["frequencies"], sidecar["frequencies"]);
}

#[test]
fn replayed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "s.txt", &[]);
    let first = dir.path().join("a.json").display().to_string();
    let o = streamforge(&["run", "--stream", &path, "--task", "f1", "--trials", "12", "--seed", "9", "--out", &first]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));

    let again = streamforge(&["run", "--replay", &first]);
    assert_eq!(again.stdout, std::fs::read(&first).unwrap());

    let report: Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(report["trials"].as_array().unwrap().len(), 12);
    assert!(report.get("wall_time").is_none());
}

#[test]
fn seed_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "s.txt", &[]);
    let run = |seed: &str, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_streamforge"));
        c.args(["run", "--stream", &path, "--task", "fp", "--trials", "3", "--seed", seed]);
        match env {
            Some(v) => c.env("STREAMFORGE_SEED", v),
            None => c.env_remove("STREAMFORGE_SEED"),
        };
        c.output().unwrap().stdout
    };
    assert_eq!(run("1", Some("5")), run("5", None));
    assert_ne!(run("1", None), run("5", None));
}

#[test]
fn report_renders_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "s.txt", &[]);
    let json = dir.path().join("r.json").display().to_string();
    streamforge(&["run", "--stream", &path, "--task", "fp", "--trials", "4", "--out", &json]);
    let o = streamforge(&["report", "--input", &json, "--format", "csv"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("trial,estimate,error,failure"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn errors_exit_with_two() {
    assert_eq!(streamforge(&["oracle", "--stream", "/nonexistent/stream.txt"]).status.code(), Some(2));
    assert_eq!(streamforge(&["run", "--task", "fp"]).status.code(), Some(2));
    assert_eq!(streamforge(&["gen", "--shape", "pareto", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn changed_stream_blocks_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "s.txt", &[]);
    let json = dir.path().join("r.json").display().to_string();
    streamforge(&["run", "--stream", &path, "--task", "fp", "--trials", "2", "--out", &json]);
    std::fs::write(&path, "I 1\n").unwrap();
    let o = streamforge(&["run", "--replay", &json]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("changed"));
}
