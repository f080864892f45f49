use std::sync::Arc;

use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::engine::{solve, SolverConfig};
use crate::jump_ito::simulate_forward;
use crate::kernel::{build_grid, simulate_bundle, DefaultModel};
use crate::linear::{adjoint_price, linear_driver};
use crate::regression::RegressionBasis;
use crate::stats::{combined_se, MeanEstimate};

fn setup(gamma: f64, steps: usize, n: usize, seed: u64) -> (GameSpec, PathBundle, ForwardPaths) {
    let spec = separable_game(0.0, 41);
    let bundle = simulate_bundle(&DefaultModel::constant(1, gamma), &build_grid(1.0, steps).unwrap(), 1, n, seed).unwrap();
    let fwd = simulate_forward(&spec.forward, &bundle).unwrap();
    (spec, bundle, fwd)
}

fn measure_change(b: f64, c: f64) -> GameSpec {
    let mut spec = separable_game(0.0, 3);
    spec.drift = Arc::new(move |_, _, _, _, out| out[0] = b);
    spec.jump = Arc::new(move |_, _, _, _, out| out[0] = c);
    spec
}

fn grid11() -> Vec<f64> {
    ControlGrid::interval(-1.0, 1.0, 41).points.into_iter().map(|p| p[0]).collect()
}

#[test]
fn raw_separable_saddle_is_exact() {
    let g = grid11();
    let (z, s) = (1.0, 1.0);
    let vals: Vec<f64> = g.iter().flat_map(|&u| g.iter().map(move |&v| z * u + u * u + s * v + (1.0 - v * v))).collect();
    let res = grid_saddle(&vals, 41, 41);
    assert!((g[res.u_index] + 0.5).abs() < 1e-12);
    assert!((g[res.v_index] - 0.5).abs() < 1e-12);
    assert_eq!(res.isaacs_gap, 0.0);
    for a in 0..41 {
        for b in 0..41 {
            assert!(vals[res.u_index * 41 + b] <= res.value);
            assert!(vals[a * 41 + res.v_index] >= res.value);
        }
    }
}

#[test]
fn non_separable_hamiltonian_has_gap() {
    let g = grid11();
    let vals: Vec<f64> = g.iter().flat_map(|&u| g.iter().map(move |&v| (u - v) * (u - v))).collect();
    let res = grid_saddle(&vals, 41, 41);
    assert!((res.upper - 1.0).abs() < 1e-12);
    assert_eq!(res.lower, 0.0);
    assert!(res.isaacs_gap > 0.5);
}

#[test]
fn ties_go_to_lowest_index() {
    let res = grid_saddle(&[1.0; 6], 2, 3);
    assert_eq!((res.u_index, res.v_index), (0, 0));
}

#[test]
fn hamiltonian_matches_formula() {
    let spec = separable_game(0.0, 5);
    let (u, v, z, zeta, gamma) = (0.3, -0.4, 0.7, 1.3, 0.2);
    let h = hamiltonian(&spec, 0.1, &[0.5], &[z], &[zeta], &[0], &[gamma], &[u], &[v]).unwrap();
    let expected = z * u + zeta * 0.5 * v * gamma + u * u + 1.0 - v * v;
    assert!((h - expected).abs() < 1e-14);
    let post = hamiltonian(&spec, 0.1, &[0.5], &[z], &[zeta], &[1], &[gamma], &[u], &[v]).unwrap();
    assert!((post - (z * u + u * u + 1.0 - v * v)).abs() < 1e-14);
}

#[test]
fn saddle_search_matches_closed_form_controls() {
    let spec = separable_game(0.0, 41);
    let res = saddle_search(&spec, 0.0, &[0.0], &[0.6], &[1.0], &[0], &[1.0]).unwrap();
    assert!((res.u_star[0] + 0.3).abs() < 1e-12);
    assert!((res.v_star[0] - 0.25).abs() < 1e-12);
    assert!(res.isaacs_gap <= 1e-15);
}

#[test]
fn trivial_measure_change_has_unit_weights() {
    let (_, bundle, fwd) = setup(0.5, 10, 200, 1);
    let spec = measure_change(0.0, 0.0);
    let l = girsanov_weights(&spec, &Strategy::Constant(vec![0.0]), &Strategy::Constant(vec![0.0]), &bundle, &fwd).unwrap();
    assert!(l.iter().all(|&w| w == 1.0));
}

#[test]
fn deterministic_running_cost_gives_horizon() {
    let (mut spec, bundle, fwd) = setup(0.5, 10, 100, 2);
    spec.drift = Arc::new(|_, _, _, _, out| out[0] = 0.0);
    spec.jump = Arc::new(|_, _, _, _, out| out[0] = 0.0);
    spec.running_cost = Arc::new(|_, _, _, _| 1.0);
    spec.terminal_cost = TerminalSpec::constant(0.0);
    let c = Strategy::Constant(vec![0.0]);
    let est = evaluate_cost(&spec, &c, &c, &bundle, &fwd).unwrap();
    assert!((est.cost.mean - 1.0).abs() < 1e-12);
    assert!(est.cost.se < 1e-12);
    assert!((est.ess_fraction - 1.0).abs() < 1e-12);
}

#[test]
fn weighted_intensity_shifts_by_jump_factor() {
    let gamma = 0.2;
    let bundle = simulate_bundle(&DefaultModel::constant(1, gamma), &build_grid(1.0, 50).unwrap(), 1, 20_000, 3).unwrap();
    let spec = measure_change(0.0, 0.5);
    let fwd = simulate_forward(&spec.forward, &bundle).unwrap();
    let c = Strategy::Constant(vec![0.0]);
    let l = girsanov_weights(&spec, &c, &c, &bundle, &fwd).unwrap();
    assert!(MeanEstimate::from_samples(&l).within(1.0, 3.0));
    let lam = weighted_intensity(&l, &bundle, 0).unwrap();
    assert!(lam.within(1.5 * gamma, 3.0), "{lam:?}");
}

#[test]
fn jump_factor_violation_is_reported() {
    let (_, bundle, fwd) = setup(1.0, 10, 100, 4);
    let spec = measure_change(0.0, -1.0);
    let c = Strategy::Constant(vec![0.0]);
    let err = evaluate_cost(&spec, &c, &c, &bundle, &fwd).unwrap_err();
    assert!(matches!(err, Error::Constraint(_)), "{err}");
}

#[test]
fn validate_accepts_example_and_rejects_negative_cost() {
    let (mut spec, bundle, fwd) = setup(1.0, 10, 100, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    spec.validate(&bundle, &fwd, 200, &mut rng).unwrap();
    spec.running_cost = Arc::new(|_, _, u, _| u[0]);
    assert!(spec.validate(&bundle, &fwd, 200, &mut rng).is_err());
}

#[test]
fn fixed_controls_agree_with_weighted_cost() {
    let (spec, bundle, fwd) = setup(1.0, 20, 4000, 6);
    let (u, v) = (vec![0.3], vec![-0.2]);
    let basis = RegressionBasis::polynomial(2);
    let game = solve_game_bsde(&spec, &bundle, &fwd, &basis, &GameMode::Fixed { u: u.clone(), v: v.clone() }).unwrap();
    let mc = evaluate_cost(&spec, &Strategy::Constant(u), &Strategy::Constant(v), &bundle, &fwd).unwrap();
    let tol = 3.0 * combined_se(&[game.value.se, mc.cost.se]) + 5.0 * bundle.dt();
    assert!((game.value.mean - mc.cost.mean).abs() <= tol, "{:?} vs {:?}", game.value, mc.cost);
}

#[test]
fn saddle_mode_passes_perturbation_checks() {
    let (spec, bundle, fwd) = setup(1.0, 20, 4000, 7);
    let basis = RegressionBasis::polynomial(2);
    let game = solve_game_bsde(&spec, &bundle, &fwd, &basis, &GameMode::Saddle).unwrap();
    assert!(game.max_isaacs_gap <= 1e-12, "{}", game.max_isaacs_gap);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let report = verify_saddle(&spec, &game, &bundle, &fwd, 4, &mut rng).unwrap();
    assert!(report.cross_ok, "{} > {}", report.cross_gap, report.cross_tol);
    assert_eq!(report.perturbations.len(), 8);
    assert!(report.all_hold, "{:?}", report.perturbations.iter().map(|p| (p.margin, p.tol)).collect::<Vec<_>>());
    let br = solve_game_bsde(&spec, &bundle, &fwd, &basis, &GameMode::BestResponseToU { u: vec![0.0] }).unwrap();
    let tol = 3.0 * combined_se(&[br.value.se, game.value.se]) + 5.0 * bundle.dt();
    assert!(br.value.mean >= game.value.mean - tol);
    let br = solve_game_bsde(&spec, &bundle, &fwd, &basis, &GameMode::BestResponseToV { v: vec![0.0] }).unwrap();
    assert!(br.value.mean <= game.value.mean + tol);
}

#[test]
fn saddle_mode_refuses_without_isaacs() {
    let (mut spec, bundle, fwd) = setup(1.0, 5, 200, 8);
    spec.drift = Arc::new(|_, _, _, _, out| out[0] = 0.0);
    spec.jump = Arc::new(|_, _, _, _, out| out[0] = 0.0);
    spec.running_cost = Arc::new(|_, _, u, v| (u[0] - v[0]) * (u[0] - v[0]));
    let err = solve_game_bsde(&spec, &bundle, &fwd, &RegressionBasis::polynomial(1), &GameMode::Saddle).unwrap_err();
    match err {
        Error::Constraint(msg) => assert!(msg.contains("Isaacs"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn zero_cost_game_is_tight() {
    let (mut spec, bundle, fwd) = setup(1.0, 5, 200, 10);
    spec.running_cost = Arc::new(|_, _, _, _| 0.0);
    spec.terminal_cost = TerminalSpec::constant(0.0);
    let game = solve_game_bsde(&spec, &bundle, &fwd, &RegressionBasis::polynomial(1), &GameMode::Saddle).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = verify_saddle(&spec, &game, &bundle, &fwd, 3, &mut rng).unwrap();
    assert!(report.all_hold);
    assert!(report.perturbations.iter().all(|p| p.cost.cost.mean == 0.0 && p.margin == 0.0));
}

#[test]
fn control_only_maximizer_is_optimal() {
    let (mut spec, bundle, fwd) = setup(1.0, 20, 4000, 11);
    spec.u_grid = ControlGrid::singleton(vec![0.0]);
    spec.drift = Arc::new(|_, _, _, _, out| out[0] = 0.0);
    spec.running_cost = Arc::new(|_, _, _, v| 1.0 - v[0] * v[0]);
    let game = solve_game_bsde(&spec, &bundle, &fwd, &RegressionBasis::polynomial(2), &GameMode::Saddle).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let report = verify_saddle(&spec, &game, &bundle, &fwd, 6, &mut rng).unwrap();
    assert!(report.all_hold);
    for p in report.perturbations.iter().filter(|p| p.player == "v") {
        assert!(p.cost.cost.mean <= report.value.cost.mean + p.tol);
    }
}

#[test]
fn singleton_robust_price_is_bitwise_linear() {
    let bundle = simulate_bundle(&DefaultModel::constant(1, 0.1), &build_grid(1.0, 20).unwrap(), 1, 2000, 12).unwrap();
    let set = ThetaSet::singleton(0.05, vec![0.2], vec![-0.5]);
    let claim = TerminalSpec::survival(0);
    let basis = RegressionBasis::polynomial(2);
    let robust = robust_price(&set, &claim, &bundle, None, &basis, 0.1).unwrap();
    let lin = solve(&linear_driver(&set.linear_spec(0, claim.clone()), bundle.grid(), 0.1), &claim, &bundle, None, &basis, &SolverConfig::default()).unwrap();
    assert_eq!(robust.solution.fields, lin.fields);
    assert_eq!(robust.price.mean.to_bits(), lin.y0().to_bits());
}

#[test]
fn two_point_set_picks_larger_price() {
    let bundle = simulate_bundle(&DefaultModel::constant(1, 0.1), &build_grid(1.0, 50).unwrap(), 1, 20_000, 13).unwrap();
    let set = ThetaSet { points: vec![ThetaPoint { u: 0.0, v: vec![0.0], w: vec![0.0] }, ThetaPoint { u: 0.1, v: vec![0.0], w: vec![0.0] }] };
    let claim = TerminalSpec::survival(0);
    let res = robust_price(&set, &claim, &bundle, None, &RegressionBasis::constant(), 0.1).unwrap();
    let best = res.member_prices.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
    let tol = 3.0 * combined_se(&[res.price.se, best.se]) + 5.0 * bundle.dt();
    assert!((res.price.mean - best.mean).abs() <= tol, "{:?} vs {:?}", res.price, best);
    let plain = adjoint_price(&set.linear_spec(1, claim), &bundle, None).unwrap();
    assert_eq!(plain, *best);
}

#[test]
fn theta_set_rejects_jump_factor_below_minus_one() {
    let set = ThetaSet::singleton(0.0, vec![0.0], vec![-1.0]);
    assert!(matches!(set.validate(1, 1), Err(Error::Constraint(_))));
    assert_eq!(ThetaSet::product((0.0, 0.1), (-0.2, 0.2), (-0.5, 0.5), 3).points.len(), 27);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grid_saddle_inequalities_hold_without_gap(
        a in prop::collection::vec(-2.0f64..2.0, 5),
        b in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let vals: Vec<f64> = a.iter().flat_map(|&x| b.iter().map(move |&y| x + y)).collect();
        let res = grid_saddle(&vals, 5, 4);
        prop_assert!(res.isaacs_gap <= 1e-15);
        for r in 0..5 {
            for c in 0..4 {
                prop_assert!(vals[res.u_index * 4 + c] <= res.value + 1e-15);
                prop_assert!(vals[r * 4 + res.v_index] >= res.value - 1e-15);
            }
        }
    }

    #[test]
    fn upper_value_dominates_lower(vals in prop::collection::vec(-5.0f64..5.0, 12)) {
        let res = grid_saddle(&vals, 3, 4);
        prop_assert!(res.upper >= res.lower);
        prop_assert_eq!(res.isaacs_gap, res.upper - res.lower);
    }
}
