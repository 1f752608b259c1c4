//! End-to-end runs of the installed binary: every subcommand, both report
//! formats, the header block, file output, and the exit-code contract.

use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ewens-pitman"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be utf-8")
}

#[test]
fn simulate_json_report_has_header_block_and_is_deterministic() {
    let args = [
        "simulate", "--alpha", "0", "--lambda", "1", "--n", "500", "--d", "2", "--replicates",
        "6", "--seed", "42", "--format", "json",
    ];
    let first = run(&args);
    assert!(first.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&first)).unwrap();
    for key in ["version", "command", "master_seed", "config", "results"] {
        assert!(report.get(key).is_some(), "missing header key {key}");
    }
    assert_eq!(report["command"], "simulate");
    assert_eq!(report["master_seed"], 42);
    assert_eq!(report["results"]["replicates"], 6);
    let second = run(&args);
    assert_eq!(first.stdout, second.stdout, "same seed, same bytes");
}

#[test]
fn simulate_csv_emits_checkpoint_rows() {
    let out = run(&[
        "simulate", "--alpha", "0.5", "--lambda", "1", "--n", "400", "--d", "2", "--replicates",
        "3", "--seed", "7", "--format", "csv", "--checkpoints", "0.5,1.0",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("# version="));
    assert!(text.contains("# master_seed=7"));
    let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(lines.next(), Some("replicate,fraction,items,total,k1,k2"));
    assert_eq!(lines.count(), 6, "3 replicates x 2 checkpoints");
}

#[test]
fn exact_tabulates_moments_in_both_formats() {
    let json_out = run(&[
        "exact", "--alpha", "0.3", "--lambda", "1", "--n", "50", "--d", "2", "--s", "2",
        "--format", "json",
    ]);
    assert!(json_out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    assert_eq!(report["command"], "exact");
    assert!(report["results"]["rows"].as_array().is_some_and(|r| !r.is_empty()));

    let csv_out = run(&[
        "exact", "--alpha", "0.3", "--lambda", "1", "--n", "50", "--d", "2", "--s", "2",
        "--format", "csv",
    ]);
    assert!(csv_out.status.success());
    let text = stdout(&csv_out);
    assert!(text.contains("h,size,order,falling,central,flagged"));
    assert!(text.contains("total"));
}

#[test]
fn asympt_reports_the_covariance_model() {
    let out = run(&["asympt", "--alpha", "0", "--lambda", "1", "--d", "2"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let results = &report["results"];
    assert_eq!(results["d"], 2);
    let mean = results["mean"].as_array().unwrap();
    assert_eq!(mean.len(), 3);
    assert!((mean[0].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let gamma = results["gamma_quadrature"].as_array().unwrap();
    assert_eq!(gamma.len(), 3);
    let g11 = gamma[0][0].as_f64().unwrap();
    assert!((g11 - (std::f64::consts::LN_2 - 0.5)).abs() < 1e-9);
}

#[test]
fn verify_moments_passes_the_small_grid() {
    let out = run(&["verify", "moments", "--max-n", "4"]);
    assert!(out.status.success(), "exit 0 expected: {}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));
}

#[test]
fn verify_lln_grades_component_deviations() {
    let out = run(&[
        "verify", "lln", "--n-grid", "500,2000", "--tolerance", "0.5", "--seed", "1",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("component 0"));
    assert!(text.contains("PASS"));
}

#[test]
fn verify_martingale_exit_code_tracks_the_verdict() {
    let pass = run(&[
        "verify", "martingale", "--n", "20000", "--seed-count", "4", "--tolerance", "0.5",
    ]);
    assert!(pass.status.success());
    assert!(stdout(&pass).contains("identity exact: PASS"));

    let fail = run(&[
        "verify", "martingale", "--n", "4000", "--seed-count", "4", "--tolerance", "1e-6",
    ]);
    assert_eq!(fail.status.code(), Some(1), "tight tolerance must fail");
    assert!(stdout(&fail).contains("FAIL"));
}

#[test]
fn audit_grades_every_display_and_exits_zero() {
    let text_out = run(&["audit", "--alpha", "0", "--lambda", "1", "--d", "3"]);
    assert!(text_out.status.success(), "findings are not failures");
    let text = stdout(&text_out);
    assert!(text.starts_with("version "));
    assert!(text.contains("MATCH"));
    assert!(text.contains("MISMATCH"));

    let json_out = run(&[
        "audit", "--alpha", "0", "--lambda", "1", "--d", "3", "--format", "json",
    ]);
    assert!(json_out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    let findings = report["results"]["findings"].as_array().unwrap();
    assert!(!findings.is_empty());
    for finding in findings {
        assert!(finding["location"].as_str().is_some_and(|s| !s.is_empty()));
        assert!(finding["abs_diff"].as_f64().is_some());
        let verdict = finding["verdict"].as_str().unwrap();
        assert!(verdict == "MATCH" || verdict == "MISMATCH");
    }
}

#[test]
fn out_flag_writes_the_report_to_a_file() {
    let dir = std::env::temp_dir().join("ewens-pitman-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("asympt.json");
    let out = run(&[
        "asympt", "--alpha", "0.5", "--lambda", "2", "--d", "1", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    let body = std::fs::read_to_string(&path).unwrap();
    let report: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(report["command"], "asympt");
    std::fs::remove_file(&path).ok();
}

#[test]
fn bad_arguments_exit_with_usage_or_config_errors() {
    let unknown_regime = run(&[
        "simulate", "--alpha", "0", "--regime", "exponential", "--n", "10", "--d", "1",
        "--seed", "1",
    ]);
    assert!(!unknown_regime.status.success());

    let order_out_of_range = run(&[
        "exact", "--alpha", "0", "--lambda", "1", "--n", "10", "--d", "1", "--s", "9",
    ]);
    assert!(!order_out_of_range.status.success());

    let missing_lambda = run(&["asympt", "--alpha", "0", "--d", "1"]);
    assert_eq!(missing_lambda.status.code(), Some(2), "clap usage error");
}
