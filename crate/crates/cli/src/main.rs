//! `dbsde` command-line front end.
//!
//! ```text
//! dbsde <experiment> [--config run.json] [--set key.path=value]...
//! ```
//!
//! Exit codes: 0 success, 2 configuration or output errors, 3 numerical
//! failures. `DBSDE_THREADS` sets the worker thread count.

mod config;
mod experiments;

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use config::{Format, RunConfig};
use experiments::Outcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("output error: {0}")]
    Output(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<dbsde::Error> for CliError {
    fn from(e: dbsde::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dbsde", version, about = "BSDEs with default risk: simulation, pricing, comparison and games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set bundle.n_paths=20000`. The value is
    /// parsed as JSON and taken as a string otherwise.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the Brownian/default bundle and check its martingale structure.
    Simulate(RunArgs),
    /// Price a linear claim three ways: BSDE solve, adjoint weights, closed form.
    PriceLinear(RunArgs),
    /// Replicate a defaultable claim with three assets.
    Replicate(RunArgs),
    /// Solve a BSDE with a configured driver and claim.
    Solve(RunArgs),
    /// Solve two BSDEs on one bundle and check the comparison property.
    Compare(RunArgs),
    /// Run the comparison counterexample suite.
    Counterexample(RunArgs),
    /// Solve the separable zero-sum game and verify its saddle point.
    Game(RunArgs),
    /// Robust upper price over a grid of linear models.
    Robust(RunArgs),
    /// Convergence of the jump Ito formula residual under grid refinement.
    ItoCheck(RunArgs),
}

type Runner = fn(&mut RunConfig) -> Result<Outcome, CliError>;

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs, Runner) {
        match self {
            Command::Simulate(a) => ("simulate", a, experiments::simulate),
            Command::PriceLinear(a) => ("price-linear", a, experiments::price_linear),
            Command::Replicate(a) => ("replicate", a, experiments::replicate),
            Command::Solve(a) => ("solve", a, experiments::solve_cmd),
            Command::Compare(a) => ("compare", a, experiments::compare),
            Command::Counterexample(a) => ("counterexample", a, experiments::counterexample),
            Command::Game(a) => ("game", a, experiments::game),
            Command::Robust(a) => ("robust", a, experiments::robust),
            Command::ItoCheck(a) => ("ito-check", a, experiments::ito_check),
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    experiment: &'a str,
    seed: u64,
    passed: Option<bool>,
    result: &'a Value,
    config: &'a RunConfig,
    generated_at: String,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DBSDE_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("DBSDE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn open_output(path: &Option<String>) -> Result<Option<File>, CliError> {
    path.as_ref()
        .map(|p| File::create(p).map_err(|e| CliError::Output(format!("cannot write {p}: {e}"))))
        .transpose()
}

/// One header row and one value row from the scalar top-level entries.
fn summary_csv(result: &Value, passed: Option<bool>) -> Vec<u8> {
    let mut names = vec!["passed".to_string()];
    let mut values = vec![passed.map_or(String::new(), |p| p.to_string())];
    if let Value::Object(map) = result {
        for (k, v) in map {
            let cell = match v {
                Value::Number(n) => n.as_f64().map(dbsde::engine::format_float).unwrap_or_else(|| n.to_string()),
                Value::Bool(b) => b.to_string(),
                Value::String(s) => s.clone(),
                _ => continue,
            };
            names.push(k.clone());
            values.push(cell);
        }
    }
    format!("{}\n{}\n", names.join(","), values.join(",")).into_bytes()
}

fn run(cmd: &Command) -> Result<Option<bool>, CliError> {
    configure_threads()?;
    let (name, args, exec) = cmd.parts();
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.set)?;
    let sink = open_output(&cfg.output.path)?;
    log::info!("running {name} with seed {}", cfg.bundle.seed);
    let outcome = exec(&mut cfg)?;
    let report = Report {
        experiment: name,
        seed: cfg.bundle.seed,
        passed: outcome.passed,
        result: &outcome.result,
        config: &cfg,
        generated_at: chrono::Utc::now().to_rfc3339(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report is serializable") + "\n";
    let write_err = |e: std::io::Error| CliError::Output(e.to_string());
    match (cfg.output.format, sink) {
        (Format::Json, Some(mut f)) => f.write_all(json.as_bytes()).map_err(write_err)?,
        (Format::Json, None) => std::io::stdout().write_all(json.as_bytes()).map_err(write_err)?,
        (Format::Csv, sink) => {
            let csv = outcome.csv.unwrap_or_else(|| summary_csv(&outcome.result, outcome.passed));
            match sink {
                Some(mut f) => {
                    f.write_all(&csv).map_err(write_err)?;
                    std::io::stdout().write_all(json.as_bytes()).map_err(write_err)?;
                }
                None => std::io::stdout().write_all(&csv).map_err(write_err)?,
            }
        }
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(passed) => {
            if passed == Some(false) {
                log::warn!("experiment finished but its checks did not pass");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dbsde: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
