//! Comparison of BSDE solutions, the jump-coefficient condition on generators,
//! and a reproducible case where strict comparison breaks down.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{freeze_driver, solve, BsdeSolution, DriverSpec, NodeContext, SolverConfig, TerminalSpec};
use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::{build_grid, simulate_bundle, DefaultModel, PathBundle};
use crate::regression::RegressionBasis;
use crate::stats::{sample_std, MeanEstimate};

/// Quotient threshold of the condition.
pub const QUOTIENT_FLOOR: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientWitness {
    pub path: usize,
    pub node: usize,
    pub t: f64,
    pub component: usize,
    pub zeta: f64,
    pub zeta_bar: f64,
    pub quotient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCReport {
    pub ok: bool,
    /// `+inf` when no pre-default sample with positive intensity exists.
    pub worst_quotient: f64,
    pub samples: usize,
    /// Worst cases, most negative first.
    pub witnesses: Vec<QuotientWitness>,
}

const MAX_WITNESSES: usize = 5;

/// Samples the componentwise quotient
/// `[g(.., zeta~^{j-1}) - g(.., zeta~^j)] / ((zeta^j - zeta_bar^j) 1{pre} gamma_j)`,
/// where `zeta~^j` takes its first `j` components from `zeta_bar` and the rest
/// from `zeta`. The condition holds when every quotient exceeds `-1`.
pub fn check_condition_c<R: Rng>(
    driver: &DriverSpec,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    sample_count: usize,
    rng: &mut R,
) -> Result<ConditionCReport> {
    if sample_count == 0 {
        return Err(Error::InvalidInput("sample_count must be at least 1".into()));
    }
    if driver.m != 1 {
        return Err(Error::InvalidInput("condition (c) is checked for scalar generators".into()));
    }
    let (d, k) = (bundle.d(), bundle.k());
    if k == 0 {
        return Ok(ConditionCReport { ok: true, worst_quotient: f64::INFINITY, samples: 0, witnesses: vec![] });
    }
    let mut witnesses: Vec<QuotientWitness> = Vec::new();
    let mut worst = f64::INFINITY;
    let mut taken = 0;
    let unif = |rng: &mut R| 4.0 * (rng.random::<f64>() - 0.5);
    for _ in 0..sample_count {
        let j = rng.random_range(0..k);
        let found = (0..1000).find_map(|_| {
            let p = rng.random_range(0..bundle.n_paths());
            let i = rng.random_range(0..bundle.steps());
            (bundle.alive(p, i, j) && bundle.gamma(i)[j] > 0.0).then_some((p, i))
        });
        let Some((p, i)) = found else { continue };
        let ctx = NodeContext::from_bundle(bundle, forward, p, i);
        let y = unif(rng);
        let z: Vec<f64> = (0..d).map(|_| unif(rng)).collect();
        let zeta: Vec<f64> = (0..k).map(|_| unif(rng)).collect();
        let mut zeta_bar: Vec<f64> = (0..k).map(|_| unif(rng)).collect();
        if (zeta[j] - zeta_bar[j]).abs() < 1e-3 {
            zeta_bar[j] = zeta[j] + 0.5;
        }
        let mut before: Vec<f64> = zeta.clone();
        before[..j].copy_from_slice(&zeta_bar[..j]);
        let mut after = before.clone();
        after[j] = zeta_bar[j];
        let num = driver.eval_scalar(&ctx, y, &z, &before) - driver.eval_scalar(&ctx, y, &z, &after);
        let q = num / ((zeta[j] - zeta_bar[j]) * ctx.active_intensity(j));
        taken += 1;
        if q < worst {
            worst = q;
        }
        witnesses.push(QuotientWitness { path: p, node: i, t: ctx.t, component: j, zeta: zeta[j], zeta_bar: zeta_bar[j], quotient: q });
        witnesses.sort_by(|a, b| a.quotient.total_cmp(&b.quotient));
        witnesses.truncate(MAX_WITNESSES);
    }
    Ok(ConditionCReport { ok: worst > QUOTIENT_FLOOR + 1e-9, worst_quotient: worst, samples: taken, witnesses })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Fraction of `(path, node)` pairs with `Y < Y_bar - tol`.
    pub violation_fraction: f64,
    /// Largest `Y_bar - Y` seen (0 if `Y >= Y_bar` everywhere).
    pub max_violation: f64,
    pub y0_gap: f64,
    /// Paired standard error of the gap.
    pub y0_gap_se: f64,
    pub tol: f64,
    /// Filled in by callers that know the generator.
    pub condition_c_ok: Option<bool>,
    /// Fraction of paths with `xi > xi_bar`.
    pub terminal_gap_probability: f64,
    /// `y0_gap` is within 3 SE of 0 although `xi > xi_bar` with positive frequency.
    pub strict_violation_candidate: bool,
}

fn check_scalar_pair(sol: &BsdeSolution, sol_bar: &BsdeSolution) -> Result<()> {
    if !sol.meta.same_grid(&sol_bar.meta) {
        return Err(Error::InvalidInput("solutions live on different grids or bundles".into()));
    }
    if sol.fields.m() != 1 || sol_bar.fields.m() != 1 {
        return Err(Error::InvalidInput("comparison needs scalar solutions".into()));
    }
    Ok(())
}

/// Paired estimate of `y0 - y0_bar` from the pathwise estimators.
pub fn y0_gap(sol: &BsdeSolution, sol_bar: &BsdeSolution) -> Result<MeanEstimate> {
    check_scalar_pair(sol, sol_bar)?;
    let diff: Vec<f64> = sol.y0_paths.iter().zip(&sol_bar.y0_paths).map(|(a, b)| a - b).collect();
    let mut est = MeanEstimate::from_samples(&diff);
    est.mean = sol.y0() - sol_bar.y0();
    Ok(est)
}

/// `5 dt + 3 sqrt(se^2 + se_bar^2)`.
pub fn comparison_tolerance(sol: &BsdeSolution, sol_bar: &BsdeSolution) -> f64 {
    let dt = sol.meta.horizon / sol.meta.steps as f64;
    5.0 * dt + 3.0 * (sol.y0_se().powi(2) + sol_bar.y0_se().powi(2)).sqrt()
}

pub fn compare_solutions(sol: &BsdeSolution, sol_bar: &BsdeSolution, tol: f64) -> Result<ComparisonReport> {
    check_scalar_pair(sol, sol_bar)?;
    let (n, steps) = (sol.n_paths(), sol.steps());
    let mut violations = 0usize;
    let mut max_violation: f64 = 0.0;
    for i in 0..=steps {
        for p in 0..n {
            let gap = sol_bar.y(p, i) - sol.y(p, i);
            max_violation = max_violation.max(gap);
            if gap > tol {
                violations += 1;
            }
        }
    }
    let gap = y0_gap(sol, sol_bar)?;
    let terminal_gaps = (0..n).filter(|&p| sol.y(p, steps) > sol_bar.y(p, steps) + 1e-12).count();
    let terminal_gap_probability = terminal_gaps as f64 / n as f64;
    let y0_zero = gap.mean.abs() <= 3.0 * gap.se + 1e-12;
    Ok(ComparisonReport {
        violation_fraction: violations as f64 / (n * (steps + 1)) as f64,
        max_violation,
        y0_gap: gap.mean,
        y0_gap_se: gap.se,
        tol,
        condition_c_ok: None,
        terminal_gap_probability,
        strict_violation_candidate: y0_zero && terminal_gaps > 0,
    })
}

/// Joint strict-comparison check: if `y0_gap` is zero within 3 SE then the
/// gaps `xi - xi_bar` and `int (g - g_bar)(Y_bar, Z_bar, zeta_bar) ds` must be
/// statistically zero too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictComparisonCheck {
    pub y0_gap: MeanEstimate,
    pub terminal_gap: MeanEstimate,
    pub driver_gap: MeanEstimate,
    pub y0_gap_zero: bool,
    pub gaps_zero: bool,
    /// `!y0_gap_zero || gaps_zero`.
    pub strict_holds: bool,
    pub condition_c_ok: bool,
    /// Strict comparison may only fail when the condition fails.
    pub consistent: bool,
}

fn statistically_zero(est: &MeanEstimate) -> bool {
    est.mean.abs() <= 3.0 * est.se + 1e-12
}

#[allow(clippy::too_many_arguments)]
pub fn strict_comparison_check(
    sol: &BsdeSolution,
    sol_bar: &BsdeSolution,
    driver: &DriverSpec,
    driver_bar: &DriverSpec,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    condition_c_ok: bool,
) -> Result<StrictComparisonCheck> {
    check_scalar_pair(sol, sol_bar)?;
    let (n, steps) = (bundle.n_paths(), bundle.steps());
    let dt = bundle.dt();
    let g = freeze_driver(driver, &sol_bar.fields, bundle, forward);
    let g_bar = freeze_driver(driver_bar, &sol_bar.fields, bundle, forward);
    let driver_gaps: Vec<f64> = (0..n).map(|p| (0..steps).map(|i| (g[i * n + p] - g_bar[i * n + p]) * dt).sum()).collect();
    let terminal_gaps: Vec<f64> = (0..n).map(|p| sol.y(p, steps) - sol_bar.y(p, steps)).collect();
    let y0 = y0_gap(sol, sol_bar)?;
    let terminal_gap = MeanEstimate::from_samples(&terminal_gaps);
    let driver_gap = MeanEstimate::from_samples(&driver_gaps);
    let y0_gap_zero = statistically_zero(&y0);
    let gaps_zero = statistically_zero(&terminal_gap) && statistically_zero(&driver_gap);
    let strict_holds = !y0_gap_zero || gaps_zero;
    Ok(StrictComparisonCheck {
        y0_gap: y0,
        terminal_gap,
        driver_gap,
        y0_gap_zero,
        gaps_zero,
        strict_holds,
        condition_c_ok,
        consistent: !condition_c_ok || strict_holds,
    })
}

/// Coefficients of
/// `g = a sin(y) + b tanh(z_1) + sum_j 1{pre} gamma_j (q0 zeta_j + q1 tanh(zeta_j)) - shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothDriverParams {
    pub a: f64,
    pub b: f64,
    pub q0: f64,
    pub q1: f64,
    pub shift: f64,
}

impl Default for SmoothDriverParams {
    fn default() -> Self {
        Self { a: 0.5, b: 0.5, q0: 0.5, q1: 0.5, shift: 0.0 }
    }
}

impl SmoothDriverParams {
    /// Infimum of the `zeta` difference quotient per unit intensity.
    pub fn worst_quotient(&self) -> f64 {
        self.q0 + self.q1.min(0.0)
    }

    pub fn driver(&self, gamma_max: f64) -> DriverSpec {
        let p = *self;
        let lipschitz = p.a.abs().max(p.b.abs()).max((p.q0.abs() + p.q1.abs()) * gamma_max.max(0.0).sqrt());
        DriverSpec::scalar(lipschitz, move |ctx, y, z, zeta| {
            let mut g = p.a * y.sin() - p.shift;
            if let Some(z1) = z.first() {
                g += p.b * z1.tanh();
            }
            for (j, s) in zeta.iter().enumerate() {
                let w = ctx.active_intensity(j);
                if w != 0.0 {
                    g += w * (p.q0 * s + p.q1 * s.tanh());
                }
            }
            g
        })
        .with_flags(true, true, self.worst_quotient() > -1.0 + 1e-9)
        .with_label("smooth")
    }
}

/// `g = 1{pre} sqrt(gamma) - 1{pre} sqrt(gamma) (sqrt(gamma) + 1) zeta`, one name,
/// whose solution with terminal `H_T` is `(H_t, 0, 1)`.
pub fn counterexample_driver(gamma_max: f64) -> DriverSpec {
    let c = gamma_max.sqrt() + 1.0;
    DriverSpec::scalar(c, |ctx, _y, _z, zeta| {
        let g = ctx.active_intensity(0);
        let s = g.sqrt();
        s - s * (s + 1.0) * zeta[0]
    })
    .independent_of_y()
    .with_flags(true, true, false)
    .with_label("counterexample")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub gamma: f64,
    pub horizon: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub y0: f64,
    pub y0_se: f64,
    pub y0_bar: f64,
    /// Largest `|Y - H| - tol_bucket` over nodes and default buckets.
    pub worst_bucket_excess: f64,
    pub max_abs_y_minus_h: f64,
    pub max_abs_zeta_minus_one: f64,
    pub comparison: ComparisonReport,
    pub condition_c: ConditionCReport,
    pub strict: StrictComparisonCheck,
    pub assertions: Vec<Assertion>,
    pub all_passed: bool,
}

pub fn counterexample_suite(gamma: f64, horizon: f64, steps: usize, n_paths: usize, seed: u64) -> Result<CounterexampleReport> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be a positive constant, got {gamma}")));
    }
    let grid = build_grid(horizon, steps)?;
    let bundle = simulate_bundle(&DefaultModel::constant(1, gamma), &grid, 1, n_paths, seed)?;
    let basis = RegressionBasis::constant();
    let config = SolverConfig::default();
    let driver = counterexample_driver(gamma);
    let zero = DriverSpec::zero(1);
    let sol = solve(&driver, &TerminalSpec::default_indicator(0), &bundle, None, &basis, &config)?;
    let sol_bar = solve(&zero, &TerminalSpec::constant(0.0), &bundle, None, &basis, &config)?;
    let dt = bundle.dt();

    // pathwise tail sums xi + sum_{j >= i} g_j dt give per-bucket standard errors
    let g = freeze_driver(&driver, &sol.fields, &bundle, None);
    let mut tail: Vec<f64> = (0..n_paths).map(|p| bundle.h(p, steps)[0] as f64).collect();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut max_abs: f64 = 0.0;
    for i in (0..=steps).rev() {
        if i < steps {
            for p in 0..n_paths {
                tail[p] += g[i * n_paths + p] * dt;
            }
        }
        for bucket in [0u8, 1u8] {
            let members: Vec<usize> = (0..n_paths).filter(|&p| bundle.h(p, i)[0] == bucket).collect();
            if members.is_empty() {
                continue;
            }
            let vals: Vec<f64> = members.iter().map(|&p| tail[p]).collect();
            let se = if vals.len() > 1 { sample_std(&vals) / (vals.len() as f64).sqrt() } else { 0.0 };
            let tol = 5.0 * dt + 3.0 * se;
            let err = members.iter().map(|&p| (sol.y(p, i) - bucket as f64).abs()).fold(0.0, f64::max);
            max_abs = max_abs.max(err);
            worst_excess = worst_excess.max(err - tol);
        }
    }
    let mut max_zeta_err: f64 = 0.0;
    for i in 0..steps {
        for p in 0..n_paths {
            if bundle.alive(p, i, 0) {
                max_zeta_err = max_zeta_err.max((sol.fields.zeta(p, i)[0] - 1.0).abs());
            }
        }
    }
    let bar_zero = (0..n_paths).all(|p| {
        (0..=steps).all(|i| sol_bar.y(p, i) == 0.0)
            && (0..steps).all(|i| sol_bar.fields.z(p, i)[0] == 0.0 && sol_bar.fields.zeta(p, i)[0] == 0.0)
    });
    let mut comparison = compare_solutions(&sol, &sol_bar, comparison_tolerance(&sol, &sol_bar))?;
    let mut rng = crate::kernel::rng::path_rng(seed ^ 0x5eed, 0);
    let condition_c = check_condition_c(&driver, &bundle, None, 200, &mut rng)?;
    comparison.condition_c_ok = Some(condition_c.ok);
    let strict = strict_comparison_check(&sol, &sol_bar, &driver, &zero, &bundle, None, condition_c.ok)?;

    let assertions = vec![
        Assertion {
            name: "y_tracks_default_indicator".into(),
            passed: worst_excess <= 0.0,
            detail: format!("max |Y - H| = {max_abs:.3e}, worst excess over bucket tolerance = {worst_excess:.3e}"),
        },
        Assertion {
            name: "zeta_is_one_before_default".into(),
            passed: max_zeta_err <= 0.1,
            detail: format!("max |zeta - 1| before default = {max_zeta_err:.3e}"),
        },
        Assertion {
            name: "zero_problem_is_exactly_zero".into(),
            passed: bar_zero,
            detail: "Y_bar, Z_bar, zeta_bar identically 0".into(),
        },
        Assertion {
            name: "strict_comparison_fails".into(),
            passed: comparison.y0_gap.abs() <= 3.0 * comparison.y0_gap_se + 5.0 * dt && comparison.terminal_gap_probability > 0.0,
            detail: format!(
                "y0 gap = {:.3e} (SE {:.3e}), P(xi > xi_bar) = {:.4}",
                comparison.y0_gap, comparison.y0_gap_se, comparison.terminal_gap_probability
            ),
        },
    ];
    let all_passed = assertions.iter().all(|a| a.passed);
    Ok(CounterexampleReport {
        gamma,
        horizon,
        steps,
        n_paths,
        seed,
        y0: sol.y0(),
        y0_se: sol.y0_se(),
        y0_bar: sol_bar.y0(),
        worst_bucket_excess: worst_excess,
        max_abs_y_minus_h: max_abs,
        max_abs_zeta_minus_one: max_zeta_err,
        comparison,
        condition_c,
        strict,
        assertions,
        all_passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{linear_driver, LinearBsdeSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle(gamma: f64, n: usize, seed: u64) -> PathBundle {
        simulate_bundle(&DefaultModel::constant(1, gamma), &build_grid(1.0, 50).unwrap(), 1, n, seed).unwrap()
    }

    #[test]
    fn linear_quotient_is_constant() {
        let b = bundle(0.3, 2000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = LinearBsdeSpec::constant(0.2, &[0.1], &[0.5], TerminalSpec::survival(0));
        let rep = check_condition_c(&linear_driver(&spec, b.grid(), 0.3), &b, None, 300, &mut rng).unwrap();
        assert!(rep.ok);
        assert!(rep.witnesses.iter().all(|w| (w.quotient + 0.5).abs() < 1e-12));
        assert!((rep.worst_quotient + 0.5).abs() < 1e-12);
    }

    #[test]
    fn counterexample_quotient_is_below_minus_one() {
        let b = bundle(1.0, 2000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rep = check_condition_c(&counterexample_driver(1.0), &b, None, 300, &mut rng).unwrap();
        assert!(!rep.ok);
        // -(sqrt(gamma) + 1)/sqrt(gamma) at the grid intensity
        let g = b.gamma(0)[0];
        assert!((rep.worst_quotient + (g.sqrt() + 1.0) / g.sqrt()).abs() < 1e-9);
        assert!((rep.worst_quotient + 2.0).abs() < 0.01);
        assert!(!rep.witnesses.is_empty());
    }

    #[test]
    fn zeta_free_driver_has_zero_quotient() {
        let b = bundle(0.5, 500, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let drv = DriverSpec::scalar(1.0, |_, y, z, _| y.sin() + z[0]);
        let rep = check_condition_c(&drv, &b, None, 100, &mut rng).unwrap();
        assert!(rep.ok);
        assert_eq!(rep.worst_quotient, 0.0);
    }

    #[test]
    fn identical_solutions_compare_cleanly() {
        let b = bundle(0.5, 3000, 7);
        let spec = LinearBsdeSpec::constant(0.1, &[0.0], &[0.3], TerminalSpec::survival(0));
        let drv = linear_driver(&spec, b.grid(), 0.5);
        let s = solve(&drv, &spec.claim, &b, None, &RegressionBasis::constant(), &SolverConfig::default()).unwrap();
        let rep = compare_solutions(&s, &s, 0.0).unwrap();
        assert_eq!(rep.violation_fraction, 0.0);
        assert_eq!(rep.y0_gap, 0.0);
        assert!(!rep.strict_violation_candidate);
    }

    #[test]
    fn shifted_terminal_dominates() {
        let b = bundle(0.5, 20_000, 8);
        let spec = LinearBsdeSpec::constant(0.1, &[0.0], &[0.3], TerminalSpec::survival(0));
        let drv = linear_driver(&spec, b.grid(), 0.5);
        let basis = RegressionBasis::constant();
        let cfg = SolverConfig::default();
        let s_bar = solve(&drv, &TerminalSpec::survival(0), &b, None, &basis, &cfg).unwrap();
        let s = solve(&drv, &TerminalSpec::scalar(2.0, |h, _| 2.0 - h[0] as f64), &b, None, &basis, &cfg).unwrap();
        let rep = compare_solutions(&s, &s_bar, comparison_tolerance(&s, &s_bar)).unwrap();
        assert!(rep.y0_gap > 0.0);
        assert!(rep.violation_fraction <= 1e-3);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let b1 = bundle(0.5, 100, 9);
        let b2 = bundle(0.5, 100, 10);
        let s1 = solve(&DriverSpec::zero(1), &TerminalSpec::constant(1.0), &b1, None, &RegressionBasis::constant(), &SolverConfig::default()).unwrap();
        let s2 = solve(&DriverSpec::zero(1), &TerminalSpec::constant(1.0), &b2, None, &RegressionBasis::constant(), &SolverConfig::default()).unwrap();
        assert!(compare_solutions(&s1, &s2, 0.1).is_err());
    }

    #[test]
    fn counterexample_small_run() {
        let rep = counterexample_suite(1.0, 1.0, 50, 20_000, 11).unwrap();
        assert!(rep.all_passed, "{:#?}", rep.assertions);
        assert!(!rep.condition_c.ok);
        assert!(!rep.strict.strict_holds);
        assert!(rep.strict.consistent);
    }

    #[test]
    fn counterexample_quarter_intensity() {
        let rep = counterexample_suite(0.25, 1.0, 50, 20_000, 12).unwrap();
        assert!(rep.all_passed, "{:#?}", rep.assertions);
    }

    #[test]
    fn counterexample_rejects_nonpositive_gamma() {
        assert!(counterexample_suite(0.0, 1.0, 10, 10, 1).is_err());
    }
}
