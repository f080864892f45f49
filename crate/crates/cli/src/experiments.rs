//! One function per subcommand. Each parses its `params`, runs, and returns
//! a JSON result with an overall pass flag where one is meaningful.

use std::io::Write;

use dbsde::comparison::{check_condition_c, compare_solutions, comparison_tolerance, counterexample_driver, counterexample_suite, SmoothDriverParams};
use dbsde::engine::{format_float, picard_diagnostics, solve, DriverSpec, SolverConfig, TerminalSpec};
use dbsde::game::{evaluate_cost, separable_game, solve_game_bsde, verify_saddle, GameMode, ThetaSet};
use dbsde::jump_ito::{ito_convergence, simulate_forward, ForwardSdeSpec};
use dbsde::kernel::{martingale_check, simulate_bundle, survival_estimate, PathBundle};
use dbsde::linear::{adjoint_price, closed_form_price, linear_driver, replication_strategy, LinearBsdeSpec, MarketSpec};
use dbsde::regression::RegressionBasis;
use dbsde::stats::{combined_se, MeanEstimate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Format, RunConfig};
use crate::CliError;

pub struct Outcome {
    pub result: Value,
    pub passed: Option<bool>,
    /// Per-(path, node) CSV, for experiments that have one.
    pub csv: Option<Vec<u8>>,
}

impl Outcome {
    fn new(result: Value, passed: Option<bool>) -> Self {
        Self { result, passed, csv: None }
    }
}

/// Scheme tolerance shared by every estimator-versus-estimator check.
fn tolerance(ses: &[f64], dt: f64) -> f64 {
    3.0 * combined_se(ses) + 5.0 * dt
}

fn bundle(cfg: &RunConfig) -> Result<PathBundle, CliError> {
    let b = &cfg.bundle;
    Ok(simulate_bundle(&cfg.model(), &cfg.grid()?, b.d, b.n_paths, b.seed)?)
}

fn basis(degree: usize) -> RegressionBasis {
    if degree == 0 {
        RegressionBasis::constant()
    } else {
        RegressionBasis::polynomial(degree)
    }
}

fn est(e: &MeanEstimate) -> Value {
    json!({"mean": e.mean, "se": e.se, "n": e.n})
}

/// Claim `survive 1{tau_j > T} + default 1{tau_j <= T}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClaimParams {
    pub name: usize,
    pub survive: f64,
    pub default: f64,
}

impl Default for ClaimParams {
    fn default() -> Self {
        Self { name: 0, survive: 1.0, default: 0.0 }
    }
}

impl ClaimParams {
    fn terminal(&self, k: usize) -> Result<TerminalSpec, CliError> {
        if self.name >= k {
            return Err(CliError::Config(format!("claim name {} out of range (k = {k})", self.name)));
        }
        Ok(TerminalSpec::recovery(self.name, self.survive, self.default))
    }
}

fn pad(v: &[f64], n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    match v.len() {
        0 => Ok(vec![0.0; n]),
        l if l == n => Ok(v.to_vec()),
        l => Err(CliError::Config(format!("{what} has {l} entries, expected {n}"))),
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {}

pub fn simulate(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let _: SimulateParams = cfg.take_params()?;
    let b = bundle(cfg)?;
    let mc = martingale_check(&b);
    let steps = b.steps();
    let mut survival = Vec::new();
    let mut ok = !mc.any_flagged();
    for j in 0..b.k() {
        let s = survival_estimate(&b, j, steps);
        let exact = (-b.cumulative_hazard(steps)[j]).exp();
        let within = s.within(exact, 3.0);
        ok &= within;
        survival.push(json!({"name": j, "estimate": est(&s), "exact": exact, "within_3se": within}));
    }
    let mut out = Outcome::new(json!({"martingale": mc, "survival": survival}), Some(ok));
    if cfg.output.format == Format::Csv {
        let mut w = Vec::new();
        write!(w, "path,node,t").unwrap();
        for l in 0..b.d() {
            write!(w, ",B_{}", l + 1).unwrap();
        }
        for j in 0..b.k() {
            write!(w, ",H_{}", j + 1).unwrap();
        }
        for j in 0..b.k() {
            write!(w, ",M_{}", j + 1).unwrap();
        }
        writeln!(w).unwrap();
        for p in 0..b.n_paths() {
            let mut bsum = vec![0.0; b.d()];
            let mut msum = vec![0.0; b.k()];
            for i in 0..=steps {
                if i > 0 {
                    for (acc, x) in bsum.iter_mut().zip(b.db(p, i - 1)) {
                        *acc += x;
                    }
                    for (acc, x) in msum.iter_mut().zip(b.dm(p, i - 1)) {
                        *acc += x;
                    }
                }
                write!(w, "{p},{i},{}", format_float(b.grid().t(i))).unwrap();
                for x in &bsum {
                    write!(w, ",{}", format_float(*x)).unwrap();
                }
                for h in b.h(p, i) {
                    write!(w, ",{h}").unwrap();
                }
                for x in &msum {
                    write!(w, ",{}", format_float(*x)).unwrap();
                }
                writeln!(w).unwrap();
            }
        }
        out.csv = Some(w);
    }
    Ok(out)
}

// ------------------------------------------------------------ price-linear

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearParams {
    pub a: f64,
    /// One entry per Brownian component; empty means zeros.
    pub b: Vec<f64>,
    /// One entry per name; empty means zeros.
    pub c: Vec<f64>,
    pub claim: ClaimParams,
    pub basis_degree: usize,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self { a: 0.0, b: vec![], c: vec![0.5], claim: ClaimParams::default(), basis_degree: 1 }
    }
}

pub fn price_linear(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: LinearParams = cfg.take_params()?;
    let (d, k) = (cfg.bundle.d, cfg.bundle.k);
    let spec = LinearBsdeSpec::constant(p.a, &pad(&p.b, d, "params.b")?, &pad(&p.c, k, "params.c")?, p.claim.terminal(k)?);
    let grid = cfg.grid()?;
    spec.validate(&grid)?;
    let b = bundle(cfg)?;
    let sol = solve(&linear_driver(&spec, &grid, cfg.gamma_max()), &spec.claim, &b, None, &basis(p.basis_degree), &SolverConfig::default())?;
    let adj = adjoint_price(&spec, &b, None)?;
    let dt = b.dt();
    let tol = tolerance(&[sol.y0_se(), adj.se], dt);
    let agree = (sol.y0() - adj.mean).abs() <= tol;
    let mut passed = agree;
    let mut result = json!({
        "bsde": {"y0": sol.y0(), "se": sol.y0_se()},
        "adjoint": est(&adj),
        "tolerance": tol,
        "bsde_vs_adjoint": agree,
    });
    let c_name = pad(&p.c, k, "params.c")?[p.claim.name];
    if let Some(gamma) = cfg.constant_intensity(p.claim.name) {
        let exact = closed_form_price(p.a, c_name, gamma, grid.horizon(), p.claim.survive, p.claim.default);
        let bsde_ok = (sol.y0() - exact).abs() <= tolerance(&[sol.y0_se()], dt);
        let adj_ok = (adj.mean - exact).abs() <= tolerance(&[adj.se], dt);
        passed &= bsde_ok && adj_ok;
        result["closed_form"] = json!({"value": exact, "bsde_agrees": bsde_ok, "adjoint_agrees": adj_ok});
    }
    Ok(Outcome::new(result, Some(passed)))
}

// --------------------------------------------------------------- replicate

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicateParams {
    pub market: MarketSpec,
    pub claim: ClaimParams,
    pub basis_degree: usize,
}

impl Default for ReplicateParams {
    fn default() -> Self {
        Self {
            market: MarketSpec { mu: [0.01, 0.05, 0.08], nu: [0.1, 0.3, -0.2], kappa: [-0.1, 0.4, -0.5] },
            claim: ClaimParams::default(),
            basis_degree: 1,
        }
    }
}

pub fn replicate(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: ReplicateParams = cfg.take_params()?;
    if cfg.bundle.d != 1 || cfg.bundle.k != 1 {
        return Err(CliError::Config("replicate needs bundle.d = bundle.k = 1".into()));
    }
    let gamma = cfg.constant_intensity(0).ok_or_else(|| CliError::Config("replicate needs a constant intensity".into()))?;
    let (a, bc, c) = p.market.linear_coefficients(gamma)?;
    let spec = LinearBsdeSpec::constant(a, &[bc], &[c], p.claim.terminal(1)?);
    let grid = cfg.grid()?;
    let b = bundle(cfg)?;
    let sol = solve(&linear_driver(&spec, &grid, cfg.gamma_max()), &spec.claim, &b, None, &basis(p.basis_degree), &SolverConfig::default())?;
    let xi = spec.claim.evaluate(&b, None)?;
    let (dt, steps) = (b.dt(), b.steps());
    let m = &p.market;
    let mut errors = Vec::with_capacity(b.n_paths());
    let mut holdings0 = [0.0; 3];
    for (path, claim) in xi.iter().enumerate() {
        let mut wealth = sol.y0();
        for i in 0..steps {
            let pre = b.h(path, i)[0] == 0;
            let th = replication_strategy(m, wealth, sol.fields.z(path, i)[0], sol.fields.zeta(path, i)[0], pre)?;
            if i == 0 {
                for (acc, t) in holdings0.iter_mut().zip(&th) {
                    *acc += t / b.n_paths() as f64;
                }
            }
            let (db, dm) = (b.db(path, i)[0], b.dm(path, i)[0]);
            wealth += (0..3).map(|s| th[s] * (m.mu[s] * dt + m.nu[s] * db + m.kappa[s] * dm)).sum::<f64>();
        }
        errors.push(wealth - claim);
    }
    let err = MeanEstimate::from_samples(&errors);
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(Outcome::new(
        json!({
            "coefficients": {"a": a, "b": bc, "c": c},
            "price": {"y0": sol.y0(), "se": sol.y0_se()},
            "initial_holdings": holdings0,
            "hedging_error": est(&err),
            "hedging_error_rms": rms,
        }),
        None,
    ))
}

// ------------------------------------------------------------------- solve

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverChoice {
    Linear {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: Vec<f64>,
        #[serde(default)]
        c: Vec<f64>,
    },
    Smooth(SmoothDriverParams),
    Counterexample,
}

impl DriverChoice {
    fn build(&self, cfg: &RunConfig) -> Result<DriverSpec, CliError> {
        let (d, k) = (cfg.bundle.d, cfg.bundle.k);
        Ok(match self {
            DriverChoice::Linear { a, b, c } => {
                let spec = LinearBsdeSpec::constant(*a, &pad(b, d, "driver.b")?, &pad(c, k, "driver.c")?, TerminalSpec::constant(0.0));
                spec.validate(&cfg.grid()?)?;
                linear_driver(&spec, &cfg.grid()?, cfg.gamma_max())
            }
            DriverChoice::Smooth(s) => s.driver(cfg.gamma_max()),
            DriverChoice::Counterexample => {
                if k != 1 {
                    return Err(CliError::Config("the counterexample driver needs bundle.k = 1".into()));
                }
                counterexample_driver(cfg.gamma_max())
            }
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveParams {
    pub driver: DriverChoice,
    pub claim: ClaimParams,
    pub basis_degree: usize,
    pub theta: f64,
    /// Also run the Picard contraction diagnostics.
    pub picard: bool,
    pub picard_iters: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            driver: DriverChoice::Smooth(SmoothDriverParams::default()),
            claim: ClaimParams::default(),
            basis_degree: 1,
            theta: 1.0,
            picard: false,
            picard_iters: 6,
        }
    }
}

pub fn solve_cmd(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: SolveParams = cfg.take_params()?;
    let driver = p.driver.build(cfg)?;
    let claim = p.claim.terminal(cfg.bundle.k)?;
    let b = bundle(cfg)?;
    let config = SolverConfig { theta: p.theta, picard_iters: p.picard_iters, ..SolverConfig::default() };
    let reg = basis(p.basis_degree);
    let sol = solve(&driver, &claim, &b, None, &reg, &config)?;
    let mut result = json!({
        "driver": driver.label,
        "lipschitz": driver.lipschitz,
        "conditions": {"a": driver.satisfies_a, "b": driver.satisfies_b, "c": driver.satisfies_c},
        "y0": sol.y0(),
        "se": sol.y0_se(),
    });
    let mut passed = None;
    if p.picard {
        let rep = picard_diagnostics(&driver, &claim, &b, None, &reg, &config)?;
        passed = Some(rep.converged);
        result["picard"] = serde_json::to_value(&rep).expect("serializable");
    }
    let mut out = Outcome::new(result, passed);
    if cfg.output.format == Format::Csv {
        let mut w = Vec::new();
        sol.write_csv(&b, &mut w)?;
        out.csv = Some(w);
    }
    Ok(out)
}

// ----------------------------------------------------------------- compare

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareParams {
    pub driver: DriverChoice,
    pub driver_bar: DriverChoice,
    pub claim: ClaimParams,
    pub claim_bar: ClaimParams,
    pub basis_degree: usize,
    pub condition_samples: usize,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self {
            driver: DriverChoice::Smooth(SmoothDriverParams::default()),
            driver_bar: DriverChoice::Smooth(SmoothDriverParams { shift: 0.1, ..SmoothDriverParams::default() }),
            claim: ClaimParams::default(),
            claim_bar: ClaimParams { survive: 0.8, ..ClaimParams::default() },
            basis_degree: 1,
            condition_samples: 2000,
        }
    }
}

pub fn compare(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: CompareParams = cfg.take_params()?;
    let (drv, drv_bar) = (p.driver.build(cfg)?, p.driver_bar.build(cfg)?);
    let k = cfg.bundle.k;
    let (claim, claim_bar) = (p.claim.terminal(k)?, p.claim_bar.terminal(k)?);
    let b = bundle(cfg)?;
    let reg = basis(p.basis_degree);
    let config = SolverConfig::default();
    let sol = solve(&drv, &claim, &b, None, &reg, &config)?;
    let sol_bar = solve(&drv_bar, &claim_bar, &b, None, &reg, &config)?;
    let mut rep = compare_solutions(&sol, &sol_bar, comparison_tolerance(&sol, &sol_bar))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.bundle.seed ^ 0x5eed);
    let cond = check_condition_c(&drv, &b, None, p.condition_samples, &mut rng)?;
    rep.condition_c_ok = Some(cond.ok);
    let passed = rep.violation_fraction <= 1e-3;
    Ok(Outcome::new(
        json!({
            "y0": sol.y0(), "y0_se": sol.y0_se(),
            "y0_bar": sol_bar.y0(), "y0_bar_se": sol_bar.y0_se(),
            "comparison": rep,
            "condition_c": cond,
        }),
        Some(passed),
    ))
}

// ---------------------------------------------------------- counterexample

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleParams {
    pub gamma: f64,
}

impl Default for CounterexampleParams {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

pub fn counterexample(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: CounterexampleParams = cfg.take_params()?;
    if !(p.gamma > 0.0 && p.gamma.is_finite()) {
        return Err(CliError::Config(format!("params.gamma must be positive, got {}", p.gamma)));
    }
    let rep = counterexample_suite(p.gamma, cfg.grid.horizon, cfg.grid.steps, cfg.bundle.n_paths, cfg.bundle.seed)?;
    let passed = rep.all_passed;
    Ok(Outcome::new(serde_json::to_value(&rep).expect("serializable"), Some(passed)))
}

// -------------------------------------------------------------------- game

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameModeChoice {
    Saddle,
    Fixed,
    BestResponseU,
    BestResponseV,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameParams {
    pub x0: f64,
    pub points: usize,
    pub mode: GameModeChoice,
    pub u: f64,
    pub v: f64,
    pub perturbations: usize,
    pub basis_degree: usize,
}

impl Default for GameParams {
    fn default() -> Self {
        Self { x0: 0.0, points: 41, mode: GameModeChoice::Saddle, u: 0.0, v: 0.0, perturbations: 10, basis_degree: 2 }
    }
}

pub fn game(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: GameParams = cfg.take_params()?;
    if cfg.bundle.d != 1 || cfg.bundle.k != 1 {
        return Err(CliError::Config("game needs bundle.d = bundle.k = 1".into()));
    }
    if p.points < 2 {
        return Err(CliError::Config("params.points must be at least 2".into()));
    }
    let spec = separable_game(p.x0, p.points);
    let b = bundle(cfg)?;
    let fwd = simulate_forward(&spec.forward, &b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.bundle.seed ^ 0x9a3e);
    spec.validate(&b, &fwd, 500, &mut rng)?;
    let mode = match p.mode {
        GameModeChoice::Saddle => GameMode::Saddle,
        GameModeChoice::Fixed => GameMode::Fixed { u: vec![p.u], v: vec![p.v] },
        GameModeChoice::BestResponseU => GameMode::BestResponseToU { u: vec![p.u] },
        GameModeChoice::BestResponseV => GameMode::BestResponseToV { v: vec![p.v] },
    };
    let sol = solve_game_bsde(&spec, &b, &fwd, &basis(p.basis_degree), &mode)?;
    let mut result = json!({
        "mode": p.mode,
        "bsde_value": est(&sol.value),
        "max_isaacs_gap": sol.max_isaacs_gap,
        "controls_at_origin": {"u": sol.u_strategy.at(0, 0), "v": sol.v_strategy.at(0, 0)},
    });
    let passed = if let GameMode::Saddle = mode {
        let ver = verify_saddle(&spec, &sol, &b, &fwd, p.perturbations, &mut rng)?;
        let ok = ver.all_hold && ver.cross_ok && sol.max_isaacs_gap == 0.0;
        result["verification"] = serde_json::to_value(&ver).expect("serializable");
        ok
    } else {
        let mc = evaluate_cost(&spec, &sol.u_strategy, &sol.v_strategy, &b, &fwd)?;
        let tol = tolerance(&[sol.value.se, mc.cost.se], b.dt());
        let ok = (sol.value.mean - mc.cost.mean).abs() <= tol && !mc.unreliable;
        result["weighted_cost"] = serde_json::to_value(&mc).expect("serializable");
        result["tolerance"] = json!(tol);
        ok
    };
    Ok(Outcome::new(result, Some(passed)))
}

// ------------------------------------------------------------------ robust

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustParams {
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub w: [f64; 2],
    pub points: usize,
    pub claim: ClaimParams,
    pub basis_degree: usize,
}

impl Default for RobustParams {
    fn default() -> Self {
        Self { u: [0.0, 0.05], v: [-0.2, 0.2], w: [-0.5, 0.5], points: 3, claim: ClaimParams::default(), basis_degree: 1 }
    }
}

pub fn robust(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: RobustParams = cfg.take_params()?;
    if cfg.bundle.d != 1 || cfg.bundle.k != 1 {
        return Err(CliError::Config("robust needs bundle.d = bundle.k = 1".into()));
    }
    let set = ThetaSet::product((p.u[0], p.u[1]), (p.v[0], p.v[1]), (p.w[0], p.w[1]), p.points);
    set.validate(1, 1)?;
    let claim = p.claim.terminal(1)?;
    let b = bundle(cfg)?;
    let res = dbsde::game::robust_price(&set, &claim, &b, None, &basis(p.basis_degree), cfg.gamma_max())?;
    let (best_idx, best) = res
        .member_prices
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
        .expect("non-empty set");
    let tol = tolerance(&[res.price.se, best.se], b.dt());
    let dominated = res.member_prices.iter().all(|m| res.price.mean >= m.mean - tolerance(&[res.price.se, m.se], b.dt()));
    Ok(Outcome::new(
        json!({
            "upper_price": est(&res.price),
            "members": set.points.iter().zip(&res.member_prices).map(|(t, m)| json!({"theta": t, "price": est(m)})).collect::<Vec<_>>(),
            "best_member": best_idx,
            "best_member_price": est(best),
            "tolerance": tol,
            "dominates_all_members": dominated,
        }),
        Some(dominated),
    ))
}

// --------------------------------------------------------------- ito-check

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoParams {
    pub x0: f64,
    pub mu: f64,
    pub nu: f64,
    pub kappa: f64,
    pub beta: f64,
}

impl Default for ItoParams {
    fn default() -> Self {
        Self { x0: 1.0, mu: 0.05, nu: 0.2, kappa: -0.3, beta: 0.5 }
    }
}

pub fn ito_check(cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let p: ItoParams = cfg.take_params()?;
    if cfg.bundle.d != 1 || cfg.bundle.k != 1 {
        return Err(CliError::Config("ito-check needs bundle.d = bundle.k = 1".into()));
    }
    let spec = ForwardSdeSpec::geometric(p.x0, p.mu, p.nu, p.kappa);
    let conv = ito_convergence(&spec, &cfg.model(), cfg.grid.horizon, cfg.grid.steps, cfg.bundle.n_paths, cfg.bundle.seed, p.beta)?;
    let passed = (0.3..=0.8).contains(&conv.ratio);
    Ok(Outcome::new(serde_json::to_value(conv).expect("serializable"), Some(passed)))
}
