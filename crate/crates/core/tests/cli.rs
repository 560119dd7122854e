use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use admission_core::cli::{validate_report, EXIT_COUNTEREXAMPLE, EXIT_ERROR, EXIT_OK};

fn admission(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_admission"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_smoothness_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = admission(dir.path(), &["verify-smoothness", "--seed", "1"]);
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    let stdout = String::from_utf8(ok.stdout).unwrap();
    assert!(validate_report(&stdout).unwrap().payload.verified);

    let bad = admission(dir.path(), &["verify-smoothness", "--seed", "1", "--lambda", "1", "--mu1", "0"]);
    assert_eq!(bad.status.code(), Some(EXIT_COUNTEREXAMPLE));
    let report = validate_report(&fs::read_to_string(dir.path().join("verify-smoothness-report.json")).unwrap()).unwrap();
    assert!(!report.payload.verified);
}

#[test]
fn budget_errors_name_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = admission(dir.path(), &["verify-smoothness", "--seed", "1", "--budget", "5"]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
    assert!(stderr(&o).contains("budget is 5"), "{}", stderr(&o));
}

#[test]
fn missing_seed_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = admission(dir.path(), &["lower-bound"]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn config_errors_are_located() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"seed\": 1,\n \"budget\": }").unwrap();
    let o = admission(dir.path(), &["lower-bound", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"seed": 1, "lower_bound": {"ks": [2], "extra": true}}"#).unwrap();
    let o = admission(dir.path(), &["lower-bound", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
    assert!(stderr(&o).contains("lower_bound"), "{}", stderr(&o));
}

#[test]
fn config_for_another_subcommand_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"experiment": "sinr", "seed": 1}"#).unwrap();
    let o = admission(dir.path(), &["lower-bound", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
}

#[test]
fn explicit_config_runs_and_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{
  "seed": 4,
  "gap": {"kind": "explicit",
          "valuation": {"kind": "set_function", "items": 2,
                        "function": {"kind": "coverage", "weights": [1.0], "covers": [[0], [0]]}},
          "xs": [[1, 0], [0, 1]], "alphas": [0.5, 0.5]}
}"#,
    )
    .unwrap();
    let o = admission(dir.path(), &["correlation-gap", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    let r = validate_report(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(r.payload.seed, 4);
    let ratio = r.payload.result["report"]["ratio"].as_f64().unwrap();
    assert!((ratio - 4.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.payload.config["gap"]["kind"], "explicit");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 1, "lower_bound": {"ks": [2, 3]}}"#).unwrap();
    let o = admission(dir.path(), &["lower-bound", "--config", cfg.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let r = validate_report(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(r.payload.seed, 9);
    assert_eq!(r.payload.files, vec!["lower_bound.csv".to_string()]);
    assert_eq!(fs::read_to_string(dir.path().join("lower_bound.csv")).unwrap().lines().count(), 3);
}

#[test]
fn simulate_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = admission(dir.path(), &["simulate", "--seed", "3", "--horizon", "500"]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    // one row per round, bidder and mechanism
    assert_eq!(trace.lines().count(), 1 + 500 * 2 * 2);
}
