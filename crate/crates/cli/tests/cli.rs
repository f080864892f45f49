use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dbsde(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbsde"))
        .args(args)
        .current_dir(dir)
        .env("DBSDE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON report on stdout")
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbsde(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn price_linear_reports_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lp.json");
    std::fs::write(
        &cfg,
        r#"{"grid": {"horizon": 1.0, "steps": 20},
            "bundle": {"n_paths": 4000, "seed": 7},
            "intensities": [{"kind": "constant", "value": 0.1}],
            "params": {"a": 0.0, "c": [0.5]}}"#,
    )
    .unwrap();
    let r = report(&dbsde(&["price-linear", "--config", cfg.to_str().unwrap()], dir.path()));
    let exact = r["result"]["closed_form"]["value"].as_f64().unwrap();
    assert!((exact - (-0.05f64).exp()).abs() < 1e-15);
    assert_eq!(r["passed"], true);
    assert_eq!(r["seed"], 7);
    assert_eq!(r["config"]["params"]["claim"]["survive"], 1.0);
}

#[test]
fn simulate_without_defaults_writes_flat_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbsde(
        &[
            "simulate",
            "--set", r#"intensities=[{"kind":"constant","value":0.0}]"#,
            "--set", "bundle.n_paths=50",
            "--set", "grid.steps=10",
            "--set", "output.format=csv",
            "--set", "output.path=paths.csv",
        ],
        dir.path(),
    );
    report(&out);
    let csv = std::fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "path,node,t,B_1,H_1,M_1");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50 * 11);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[4], "0");
        assert_eq!(cells[5].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn counterexample_report_lists_four_assertions() {
    let dir = tempfile::tempdir().unwrap();
    let r = report(&dbsde(&["counterexample", "--set", "bundle.n_paths=5000"], dir.path()));
    let names: Vec<&str> = r["result"]["assertions"].as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 4);
    assert!(r["result"]["assertions"].as_array().unwrap().iter().all(|a| a["passed"].is_boolean()));
    assert_eq!(r["config"]["params"]["gamma"], 1.0);
}

#[test]
fn identical_runs_match_except_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["solve", "--set", "bundle.n_paths=500", "--set", "grid.steps=10"];
    let mut a = report(&dbsde(&args, dir.path()));
    let mut b = report(&dbsde(&args, dir.path()));
    assert!(a["generated_at"].is_string());
    a.as_object_mut().unwrap().remove("generated_at");
    b.as_object_mut().unwrap().remove("generated_at");
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn embedded_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = report(&dbsde(&["robust", "--set", "bundle.n_paths=400", "--set", "grid.steps=10", "--set", "params.points=2"], dir.path()));
    let cfg = dir.path().join("resolved.json");
    std::fs::write(&cfg, serde_json::to_string(&first["config"]).unwrap()).unwrap();
    let second = report(&dbsde(&["robust", "--config", cfg.to_str().unwrap()], dir.path()));
    assert_eq!(first["result"], second["result"]);
    assert_eq!(first["config"], second["config"]);
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbsde(&["simulate", "--set", "bundle.n_paths=10", "--set", "output.path=missing/dir/out.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["solve", "--set", "grid.stepz=10"],
        vec!["solve", "--set", "grid.steps=0"],
        vec!["price-linear", "--set", "params.c=[0.5, 0.1]"],
        vec!["solve", "--config", "does-not-exist.json"],
        vec!["robust", "--set", "params.w=[-1.5, 0.5]"],
    ] {
        let out = dbsde(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_dbsde"))
        .args(["simulate", "--set", "bundle.n_paths=10"])
        .current_dir(dir.path())
        .env("DBSDE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbsde(
        &[
            "solve",
            "--set", "grid.horizon=10",
            "--set", "grid.steps=5",
            "--set", "bundle.n_paths=20",
            "--set", r#"params.driver={"kind":"smooth","a":0,"b":0,"q0":0,"q1":0,"shift":1e308}"#,
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerical failure"));
}

#[test]
fn csv_summary_row_goes_to_file_and_report_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbsde(
        &["price-linear", "--set", "bundle.n_paths=500", "--set", "output.format=csv", "--set", "output.path=summary.csv"],
        dir.path(),
    );
    let r = report(&out);
    assert_eq!(r["experiment"], "price-linear");
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("passed,"));
    assert!(lines[0].contains("bsde_vs_adjoint"));
}

#[test]
fn game_fixed_mode_cross_checks() {
    let dir = tempfile::tempdir().unwrap();
    let r = report(&dbsde(
        &["game", "--set", "bundle.n_paths=1000", "--set", "grid.steps=10", "--set", "params.mode=fixed", "--set", "params.u=0.2"],
        dir.path(),
    ));
    assert_eq!(r["passed"], true);
    assert!(r["result"]["weighted_cost"]["ess_fraction"].as_f64().unwrap() > 0.5);
}

#[test]
fn ito_check_and_replicate_run() {
    let dir = tempfile::tempdir().unwrap();
    let r = report(&dbsde(&["ito-check", "--set", "bundle.n_paths=2000", "--set", "intensities=[{\"kind\":\"constant\",\"value\":0.5}]"], dir.path()));
    assert!(r["result"]["ratio"].as_f64().unwrap() > 0.0);
    let r = report(&dbsde(&["replicate", "--set", "bundle.n_paths=1000", "--set", "grid.steps=20"], dir.path()));
    assert!(r["result"]["hedging_error_rms"].as_f64().unwrap() < 0.1);
}

#[test]
fn shipped_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for (cmd, file) in [("price-linear", "price-linear.json"), ("counterexample", "counterexample.json")] {
        let path = root.join(file);
        let r = report(&dbsde(&[cmd, "--config", path.to_str().unwrap(), "--set", "bundle.n_paths=2000"], dir.path()));
        assert_eq!(r["experiment"], cmd);
    }
}
