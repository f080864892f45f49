use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::jump_ito::{simulate_forward, ForwardSdeSpec};
use crate::kernel::{build_grid, simulate_bundle, DefaultModel, PathBundle};
use crate::regression::RegressionBasis;
use crate::stats::MeanEstimate;

fn bundle(gamma: f64, steps: usize, n: usize, seed: u64) -> PathBundle {
    let grid = build_grid(1.0, steps).unwrap();
    simulate_bundle(&DefaultModel::constant(1, gamma), &grid, 1, n, seed).unwrap()
}

/// `g = -(a y + c 1{pre} gamma zeta)`.
fn linear(a: f64, c: f64, gamma_max: f64) -> DriverSpec {
    DriverSpec::scalar(a.abs().max(c.abs() * gamma_max.sqrt()), move |ctx, y, _z, zeta| {
        -(a * y + c * ctx.active_intensity(0) * zeta[0])
    })
}

fn basis0() -> RegressionBasis {
    RegressionBasis::constant()
}

#[test]
fn zero_driver_constant_terminal() {
    let b = bundle(0.7, 20, 3000, 1);
    let sol = solve(&DriverSpec::zero(1), &TerminalSpec::constant(3.25), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    for p in 0..b.n_paths() {
        for i in 0..=20 {
            assert!((sol.y(p, i) - 3.25).abs() < 1e-12);
            if i < 20 {
                assert_eq!(sol.fields.z(p, i), &[0.0]);
                assert_eq!(sol.fields.zeta(p, i), &[0.0]);
            }
        }
    }
    assert!((sol.y0() - 3.25).abs() < 1e-12);
}

#[test]
fn terminal_is_exact_and_zeta_is_masked() {
    let b = bundle(1.0, 25, 5000, 2);
    let sol = solve(&linear(0.3, 0.5, 1.0), &TerminalSpec::default_indicator(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    for p in 0..b.n_paths() {
        assert_eq!(sol.y(p, 25), b.h(p, 25)[0] as f64);
        for i in 0..25 {
            if !b.alive(p, i, 0) {
                assert_eq!(sol.fields.zeta(p, i)[0], 0.0);
            }
        }
    }
}

#[test]
fn zeta_vanishes_where_intensity_is_zero() {
    let grid = build_grid(1.0, 10).unwrap();
    let model = DefaultModel::new(
        vec![crate::kernel::Intensity::Piecewise { breaks: vec![0.5], values: vec![0.0, 2.0] }],
        2.0,
    );
    let b = simulate_bundle(&model, &grid, 1, 4000, 3).unwrap();
    let sol = solve(&linear(0.0, 0.5, 2.0), &TerminalSpec::survival(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    for i in 0..10 {
        if b.gamma(i)[0] == 0.0 {
            for p in 0..b.n_paths() {
                assert_eq!(sol.fields.zeta(p, i)[0], 0.0);
            }
        }
    }
}

#[test]
fn coefficients_of_constant_are_zero() {
    let b = bundle(0.5, 10, 2000, 4);
    let (z, zeta) = extract_martingale_coeffs(&vec![4.0; 2000], 3, &b, &basis0(), None).unwrap();
    assert!(z.iter().all(|v| v.abs() < 1e-12));
    assert!(zeta.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn brownian_coefficient_of_brownian_motion() {
    let b = bundle(0.5, 50, 100_000, 5);
    let i = 20;
    let next: Vec<f64> = (0..b.n_paths()).map(|p| b.brownian_at(p, i + 1, 0)).collect();
    let (z, zeta) = extract_martingale_coeffs(&next, i, &b, &basis0(), None).unwrap();
    let zbar = z.iter().sum::<f64>() / z.len() as f64;
    assert!((zbar - 1.0).abs() < 0.1, "Z = {zbar}");
    let pre: Vec<f64> = (0..b.n_paths()).filter(|&p| b.alive(p, i, 0)).map(|p| zeta[p]).collect();
    assert!(pre.iter().all(|v| v.abs() < 0.1));
}

#[test]
fn jump_coefficient_of_default_indicator() {
    let b = bundle(1.0, 50, 100_000, 6);
    let i = 10;
    let next: Vec<f64> = (0..b.n_paths()).map(|p| b.h(p, i + 1)[0] as f64).collect();
    let (_z, zeta) = extract_martingale_coeffs(&next, i, &b, &basis0(), None).unwrap();
    for p in 0..b.n_paths() {
        if b.alive(p, i, 0) {
            assert!((zeta[p] - 1.0).abs() < 0.1, "zeta = {}", zeta[p]);
        } else {
            assert_eq!(zeta[p], 0.0);
        }
    }
}

#[test]
fn linear_default_driver_matches_closed_form() {
    let b = bundle(0.1, 50, 40_000, 7);
    let sol = solve(&linear(0.0, 0.5, 0.1), &TerminalSpec::survival(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    let target = (-0.05f64).exp();
    let tol = 3.0 * sol.y0_se() + 5.0 * b.dt();
    assert!((sol.y0() - target).abs() <= tol, "y0 = {} target {target} tol {tol}", sol.y0());
}

#[test]
fn implicitness_variants_agree() {
    let b = bundle(0.5, 50, 10_000, 8);
    let drv = linear(0.8, 0.3, 0.5);
    let run = |theta| {
        let cfg = SolverConfig { theta, ..Default::default() };
        solve(&drv, &TerminalSpec::recovery(0, 1.0, 0.4), &b, None, &basis0(), &cfg).unwrap().y0()
    };
    let (a, h, c) = (run(0.0), run(0.5), run(1.0));
    assert!((a - c).abs() < 5.0 * b.dt(), "{a} {h} {c}");
    assert!((h - c).abs() < 5.0 * b.dt());
}

#[test]
fn stiff_implicit_step_is_rejected() {
    let b = bundle(0.5, 4, 100, 9);
    let drv = linear(10.0, 0.0, 0.5);
    let err = solve(&drv, &TerminalSpec::constant(1.0), &b, None, &basis0(), &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, crate::Error::InvalidInput(_)));
}

#[test]
fn divergent_fixed_point_aborts() {
    let b = bundle(0.5, 10, 100, 10);
    // declared constant understates the true slope
    let drv = DriverSpec::scalar(1.0, |_, y, _, _| 500.0 * y);
    let err = solve(&drv, &TerminalSpec::constant(1.0), &b, None, &basis0(), &SolverConfig::default()).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn non_finite_driver_aborts() {
    let b = bundle(0.5, 10, 100, 11);
    let drv = DriverSpec::scalar(0.0, |_, _, _, _| f64::NAN).independent_of_y();
    let err = solve(&drv, &TerminalSpec::constant(1.0), &b, None, &basis0(), &SolverConfig::default()).unwrap_err();
    assert!(err.is_numerical());
}

#[test]
fn deterministic_for_fixed_inputs() {
    let b = bundle(0.5, 20, 5000, 12);
    let drv = linear(0.4, 0.6, 0.5);
    let s1 = solve(&drv, &TerminalSpec::survival(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    let s2 = solve(&drv, &TerminalSpec::survival(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    assert_eq!(s1, s2);
}

#[test]
fn vector_valued_solution_is_componentwise() {
    let b = bundle(0.8, 20, 5000, 13);
    let drv2 = DriverSpec::new(
        2,
        0.5,
        Arc::new(|ctx, y, _z, zeta, out: &mut [f64]| {
            out[0] = -0.5 * y[0];
            out[1] = -0.4 * ctx.active_intensity(0) * zeta[1];
        }),
    );
    let term2 = TerminalSpec::new(2, 1.0, Arc::new(|h, _, out: &mut [f64]| {
        out[0] = 1.0;
        out[1] = 1.0 - h[0] as f64;
    }));
    let cfg = SolverConfig::default();
    let vec_sol = solve(&drv2, &term2, &b, None, &basis0(), &cfg).unwrap();
    let s0 = solve(&linear(0.5, 0.0, 0.8), &TerminalSpec::constant(1.0), &b, None, &basis0(), &cfg).unwrap();
    let s1 = solve(&linear(0.0, 0.4, 0.8), &TerminalSpec::survival(0), &b, None, &basis0(), &cfg).unwrap();
    assert!((vec_sol.y0[0] - s0.y0()).abs() < 1e-12);
    assert!((vec_sol.y0[1] - s1.y0()).abs() < 1e-12);
}

#[test]
fn forward_state_regression_solve() {
    // Y = E[X_T | G_t] for a driftless X: Y_t ~ X_t
    let grid = build_grid(1.0, 20).unwrap();
    let b = simulate_bundle(&DefaultModel::constant(1, 0.3), &grid, 1, 20_000, 14).unwrap();
    let spec = ForwardSdeSpec::constant(vec![0.2], vec![0.0], vec![0.5], vec![0.3], 1, 1).unwrap();
    let x = simulate_forward(&spec, &b).unwrap();
    let term = TerminalSpec::scalar(10.0, |_, x| x.unwrap()[0].clamp(-10.0, 10.0));
    let sol = solve(&DriverSpec::zero(1), &term, &b, Some(&x), &RegressionBasis::polynomial(1), &SolverConfig::default()).unwrap();
    assert!((sol.y0() - 0.2).abs() < 3.0 * sol.y0_se() + 0.01);
    let resid: f64 = (0..b.n_paths()).map(|p| (sol.y(p, 10) - x.x(p, 10)[0]).abs()).sum::<f64>() / b.n_paths() as f64;
    assert!(resid < 0.02, "{resid}");
}

#[test]
fn picard_zero_driver_converges_immediately() {
    let b = bundle(0.5, 20, 2000, 15);
    let cfg = SolverConfig { picard_iters: 5, ..Default::default() };
    let rep = picard_diagnostics(&DriverSpec::zero(1), &TerminalSpec::survival(0), &b, None, &basis0(), &cfg).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.distances.len(), 1);
    assert!(rep.ratios.is_empty());
}

#[test]
fn picard_ratios_and_limit() {
    let b = bundle(0.1, 50, 20_000, 16);
    let drv = linear(0.0, 0.5, 0.1);
    let cfg = SolverConfig { picard_iters: 40, ..Default::default() };
    let rep = picard_diagnostics(&drv, &TerminalSpec::survival(0), &b, None, &basis0(), &cfg).unwrap();
    assert!(rep.ratios.iter().all(|r| *r <= 0.75), "{:?}", rep.ratios);
    let direct = solve(&drv, &TerminalSpec::survival(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    assert!((rep.y0 - direct.y0()).abs() < 1e-8, "{} vs {}", rep.y0, direct.y0());

    let half_y = DriverSpec::scalar(0.5, |_, y, _, _| 0.5 * y);
    let rep = picard_diagnostics(&half_y, &TerminalSpec::recovery(0, 1.0, 2.0), &b, None, &basis0(), &cfg).unwrap();
    assert!(rep.ratios.len() >= 3);
    assert!(rep.max_ratio <= 0.75, "{rep:?}");
}

#[test]
fn picard_needs_three_iterations() {
    let b = bundle(0.1, 5, 100, 17);
    let cfg = SolverConfig { picard_iters: 2, ..Default::default() };
    assert!(picard_diagnostics(&DriverSpec::zero(1), &TerminalSpec::constant(1.0), &b, None, &basis0(), &cfg).is_err());
}

#[test]
fn beta_norm_examples() {
    let b = bundle(0.1, 50, 100_000, 18);
    let mut f = NodeFields::for_bundle(&b, 1);
    assert_eq!(beta_norm(&f, 3.0, &b).unwrap().mean, 0.0);
    for p in 0..b.n_paths() {
        for i in 0..=50 {
            f.y_mut(p, i)[0] = 1.0;
        }
    }
    assert!((beta_norm(&f, 0.0, &b).unwrap().mean - 1.0).abs() < 1e-12);

    let mut g = NodeFields::for_bundle(&b, 1);
    for p in 0..b.n_paths() {
        for i in 0..50 {
            g.zeta_mut(p, i)[0] = 1.0;
        }
    }
    let est = beta_norm(&g, 0.0, &b).unwrap();
    // E[0.1 (tau ^ 1)] = 1 - e^{-0.1}; with the grid intensity the Riemann
    // sum has exactly this expectation
    let continuous = 1.0 - (-0.1f64).exp();
    assert!(est.within(continuous, 3.0), "{est:?}");
}

#[test]
fn apriori_estimate_holds_on_frozen_driver() {
    let b = bundle(0.6, 40, 10_000, 19);
    let n = b.n_paths();
    let g0: Vec<f64> = (0..40 * n)
        .map(|idx| {
            let (i, p) = (idx / n, idx % n);
            (b.brownian_at(p, i, 0)).sin() + 0.5 * b.h(p, i)[0] as f64
        })
        .collect();
    let term = TerminalSpec::recovery(0, 1.0, -0.5);
    let rep = apriori_estimate(&g0, &term, &b, None, &basis0(), 3.0).unwrap();
    assert!(rep.ratio <= 1.1, "{rep:?}");
}

#[test]
fn driver_check_detects_problems() {
    let b = bundle(0.5, 10, 500, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ok = check_driver(&linear(0.7, 0.9, 0.5), &b, None, 500, &mut rng).unwrap();
    assert!(ok.passed(), "{ok:?}");
    let understated = DriverSpec::scalar(0.1, |_, y, _, _| 2.0 * y);
    assert!(!check_driver(&understated, &b, None, 500, &mut rng).unwrap().lipschitz_ok);
    let unmasked = DriverSpec::scalar(5.0, |_, _, _, zeta| zeta[0]);
    assert!(!check_driver(&unmasked, &b, None, 2000, &mut rng).unwrap().mask_ok);
}

#[test]
fn csv_export_layout() {
    let b = bundle(0.5, 3, 4, 21);
    let sol = solve(&linear(0.1, 0.2, 0.5), &TerminalSpec::survival(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&b, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,node,t,H_1,Y,Z_1,zeta_1");
    assert_eq!(lines.len(), 1 + 4 * 4);
    assert!(lines[4].ends_with(",,"));
    let y: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(y, sol.y(0, 0));
}

#[test]
fn mean_estimate_of_solution_matches_adjoint_expectation() {
    // g = -a y: Y_0 = e^{-aT} E[xi]
    let b = bundle(0.4, 50, 20_000, 22);
    let sol = solve(&linear(0.3, 0.0, 0.4), &TerminalSpec::survival(0), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    let surv: Vec<f64> = (0..b.n_paths()).map(|p| 1.0 - b.h(p, 50)[0] as f64).collect();
    let est = MeanEstimate::from_samples(&surv);
    let expected = (-0.3f64).exp() * est.mean;
    assert!((sol.y0() - expected).abs() < 5.0 * b.dt() * expected);
}

#[test]
fn pathwise_estimator_reproduces_y0() {
    let b = bundle(0.7, 30, 8000, 23);
    let sol = solve(&linear(0.4, 0.6, 0.7), &TerminalSpec::recovery(0, 1.0, 0.2), &b, None, &basis0(), &SolverConfig::default()).unwrap();
    let mean = sol.y0_paths.iter().sum::<f64>() / sol.y0_paths.len() as f64;
    assert!((mean - sol.y0()).abs() < 1e-10);
    assert!(sol.y0_se() > 0.0);
}
