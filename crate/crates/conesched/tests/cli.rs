//! End-to-end tests of the command-line binary: output formats, exit codes,
//! warnings, and the seed override.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conesched"))
}

fn write_config(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const BALANCED: &str = r#"{
  "queues": 2,
  "environments": [
    { "pi": 0.5, "services": [[1.0, 0.0], [0.0, 1.0]] },
    { "pi": 0.5, "services": [[1.0, 1.0]] }
  ],
  "matrix": [[1.0, 0.0], [0.0, 1.0]],
  "traffic": { "kind": "fluid", "load": [0.5, 0.5] },
  "envtrace": { "kind": "periodic", "cycle_length": 10.0 },
  "horizon": 2000.0,
  "seed": 42
}"#;

const STARVATION: &str = r#"{
  "queues": 2,
  "environments": [
    { "pi": 1.0, "services": [[1.0, 0.0], [0.0, 3.0]] }
  ],
  "matrix": [[2.0, 1.0], [1.0, 2.0]],
  "traffic": { "kind": "fluid", "load": [0.2, 0.2] },
  "envtrace": { "kind": "periodic", "cycle_length": 10.0 },
  "horizon": 2000.0,
  "seed": 1
}"#;

#[test]
fn validate_accepts_a_clean_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.json", BALANCED);
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("result: ok"));
    assert!(text.contains("cone-valid: true"));
}

#[test]
fn validate_rejects_an_invalid_matrix_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", STARVATION);
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("result: invalid"));
}

#[test]
fn validate_rejects_malformed_json_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "broken.json", "{ not json");
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn validate_rejects_unknown_keys_and_nonfinite_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "extra.json",
        &BALANCED.replace("\"seed\": 42", "\"seed\": 42, \"typo\": 1"),
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(
        dir.path(),
        "inf.json",
        &BALANCED.replace("\"horizon\": 2000.0", "\"horizon\": 1e999"),
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = bin()
        .arg("validate")
        .arg("/nonexistent/nowhere.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn region_emits_certificate_and_polygon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", BALANCED);
    let poly = dir.path().join("poly.csv");
    let out = bin()
        .arg("region")
        .arg(&cfg)
        .args(["--query", "1,0.5"])
        .arg("--polygon")
        .arg(&poly)
        .args(["--angles", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let cert: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(cert["member"], serde_json::Value::Bool(true));

    let csv = std::fs::read_to_string(&poly).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("angle,rho_1,rho_2"));
    assert_eq!(lines.clone().count(), 3);
    // The 45-degree row: boundary scale 0.75 along (1,1).
    let mid: Vec<f64> = lines
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((mid[1] - 0.75).abs() <= 1e-9 && (mid[2] - 0.75).abs() <= 1e-9);
}

#[test]
fn select_warns_on_invalid_matrix_but_still_answers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", STARVATION);
    let out = bin()
        .arg("select")
        .arg(&cfg)
        .args(["--workload", "4,1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("warning"), "stderr: {}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["chosen"], serde_json::json!([0.0, 3.0]));
    assert_eq!(v["cone_valid"], serde_json::Value::Bool(false));
}

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", BALANCED);
    let csv_path = dir.path().join("traj.csv");
    let out = bin()
        .arg("simulate")
        .arg(&cfg)
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["verdict"]["verdict"], "stable");
    assert_eq!(summary["seed"], 42);
    assert_eq!(summary["flow_balance"]["ok"], serde_json::Value::Bool(true));

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("time,x_1,x_2,env,s_1,s_2"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 6);
    assert_eq!(first[0], "0");
    // Environments are numbered from 1 in the CSV.
    let envs: std::collections::BTreeSet<&str> =
        csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert!(envs.contains("1") && envs.contains("2"), "envs seen: {envs:?}");
}

#[test]
fn conesched_seed_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", BALANCED);
    let out = bin()
        .arg("simulate")
        .arg(&cfg)
        .env("CONESCHED_SEED", "777")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["seed"], 777);

    let out = bin()
        .arg("simulate")
        .arg(&cfg)
        .env("CONESCHED_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_emits_one_row_per_theta_and_flags_overload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", BALANCED);
    let out = bin()
        .arg("sweep")
        .arg(&cfg)
        .args(["--direction", "1,1"])
        .args(["--theta-min", "0.4"])
        .args(["--theta-max", "1.2"])
        .args(["--steps", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "header plus one row per theta: {text}");
    assert!(lines[0].starts_with("theta,rho_1,rho_2,member,deficit,verdict,"));
    assert!(lines[1].contains("stable"));
    assert!(lines[3].contains("unstable"), "overloaded row: {}", lines[3]);
}

#[test]
fn repro_single_criterion_passes_and_bad_index_is_rejected() {
    let out = bin().args(["repro", "--criterion", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("criterion  2"));
    assert!(text.contains("PASS"));
    assert!(text.contains("1 of 1 criteria passed"));

    let out = bin().args(["repro", "--criterion", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
