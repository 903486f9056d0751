use std::path::Path;
use std::process::{Command, Output};

fn wii(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wii")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const PARAMS: &str = r#"{"seed": 1, "n_queries": 10, "n_tables": 4, "n_indexes": 20,
    "slots_per_query": 3, "violation_probability": 0.0, "violation_magnitude": 0.1}"#;

fn generated(dir: &Path) -> String {
    let params = dir.join("params.json");
    std::fs::write(&params, PARAMS).unwrap();
    let workload = dir.join("w.json");
    let out = wii(&["generate", "--params", params.to_str().unwrap(), "--out", workload.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    workload.to_str().unwrap().to_owned()
}

fn csv_header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_owned()
}

#[test]
fn tune_prints_report_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let workload = generated(dir.path());
    let trace = dir.path().join("eval_log.csv");
    let args = [
        "tune", "--workload", &workload, "--algo", "two_phase_greedy", "--budget", "30", "--k", "3",
        "--trace", trace.to_str().unwrap(),
    ];
    let report = stdout_json(&wii(&args));
    assert!(report["charged_calls"].as_u64().unwrap() <= 30);
    assert!(report["final_configuration"].as_array().unwrap().len() <= 3);
    assert_eq!(csv_header(&trace), "step,query_id,config,kind,cost,L,U,alpha,budget_left");

    // Same seed, same answer.
    let again = stdout_json(&wii(&args));
    assert_eq!(report["final_configuration"], again["final_configuration"]);
    assert_eq!(report["skipped_calls"], again["skipped_calls"]);
}

#[test]
fn unlimited_budget_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let workload = generated(dir.path());
    let report = stdout_json(&wii(&["tune", "--workload", &workload, "--budget", "inf", "--k", "2", "--variant", "off"]));
    assert_eq!(report["budget_initial"], "inf");
    assert_eq!(report["skipped_calls"], 0);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"workload": {{"generate": {PARAMS}}}, "algorithms": ["vanilla_greedy", "mcts"],
                "budgets": [10, "inf"], "ks": [2], "alphas": [0.9], "variants": ["off", "wii"], "seeds": [1, 2]}}"#
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    for sequential in [false, true] {
        let mut args = vec!["sweep", "--config", config.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()];
        if sequential {
            args.push("--sequential");
        }
        let out = wii(&args);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 2 * 2 * 2);
    }
}

#[test]
fn validate_writes_csvs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let workload = generated(dir.path());
    let out_dir = dir.path().join("val");
    let summary = stdout_json(&wii(&["validate", "--workload", &workload, "--out-dir", out_dir.to_str().unwrap()]));
    assert_eq!(summary["submodularity"]["violations"], 0);
    for name in ["mono.csv", "submod.csv", "coverage_err.csv", "summary.json"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let workload = generated(dir.path());
    let out = wii(&["tune", "--workload", &workload, "--budget", "10", "--k", "2", "--alpha", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = wii(&["tune", "--workload", "/nonexistent.json", "--budget", "10", "--k", "2"]);
    assert!(!out.status.success());

    let out = wii(&["tune", "--workload", &workload, "--budget", "lots", "--k", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
