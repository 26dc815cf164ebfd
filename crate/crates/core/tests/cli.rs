#![cfg(feature = "cli")]

use std::path::Path;
use std::process::{Command, Output};

fn icl(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_icl"));
    cmd.args(args).env_remove("ICL_REMOTE_URL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn evaluate_then_fit_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"system": {"kind": "markov_chain", "n_states": 3}, "steps": 120}"#);
    let out_dir = dir.path().join("run");
    let out = out_dir.to_str().unwrap();

    let run = icl(&["evaluate", "--config", &cfg, "--seed-range", "0..3", "--backend", "ngram", "--out", out], &[]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(out_dir.join("loss.csv")).unwrap();
    assert!(csv.starts_with("system,seed,context_len,metric,value\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 120);

    assert_eq!(icl(&["baseline", "--config", &cfg, "--seed-range", "0..3", "--backend", "ngram", "--out", out], &[]).status.code(), Some(0));
    let fit = icl(&["fit-scaling", "--out", out], &[]);
    assert_eq!(fit.status.code(), Some(0));
    assert!(out_dir.join("fits.json").exists());
    let report = icl(&["report", "--out", out], &[]);
    assert_eq!(report.status.code(), Some(0));
    assert!(out_dir.join("report_markov_chain_bhattacharyya.svg").exists());
}

#[test]
fn simulate_and_extract_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"system": {"kind": "brownian"}, "steps": 20, "seeds": {"start": 0, "count": 2}}"#);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    assert_eq!(icl(&["simulate", "--config", &cfg, "--out", out_s], &[]).status.code(), Some(0));
    assert!(out.join("trajectories/seed-1.json").exists());
    let extract = icl(&["extract", "--config", &cfg, "--out", out_s], &[]);
    assert_eq!(extract.status.code(), Some(0));
    let jsonl = std::fs::read_to_string(out.join("pdfs/seed-0.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 20);
    assert!(jsonl.starts_with("{\"state\":1,\"bins\":[["));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(dir.path(), r#"{"system": {"kind": "brownian"}, "stpes": 10}"#);
    assert_eq!(icl(&["evaluate", "--config", &typo], &[]).status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{"system": {"kind": "brownian"}, "steps": 10}"#);
    assert_eq!(icl(&["evaluate", "--config", &cfg, "--seed-range", "5..2"], &[]).status.code(), Some(2));
    // Remote backend without any URL.
    assert_eq!(icl(&["evaluate", "--config", &cfg, "--backend", "remote"], &[]).status.code(), Some(2));
}

#[cfg(feature = "remote")]
#[test]
fn unreachable_remote_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"system": {"kind": "brownian"}, "steps": 5, "seeds": {"start": 0, "count": 2}}"#);
    let out = dir.path().join("run");
    let run = icl(
        &["evaluate", "--config", &cfg, "--backend", "remote", "--out", out.to_str().unwrap()],
        &[("ICL_REMOTE_URL", "http://127.0.0.1:9")],
    );
    assert_eq!(run.status.code(), Some(3));
    assert!(!out.join("summary.json").exists());
}
