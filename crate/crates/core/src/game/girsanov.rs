use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hamiltonian::{LocalGame, Scratch};
use super::solve::GameSolution;
use super::{GameSpec, Strategy, JUMP_FACTOR_MARGIN};
use crate::error::{Error, Result};
use crate::jump_ito::{log_exponential_step, ForwardPaths};
use crate::kernel::PathBundle;
use crate::stats::{combined_se, MeanEstimate};

/// Fraction of the sample size below which an importance-weighted estimate
/// is flagged as unreliable.
pub const MIN_ESS_FRACTION: f64 = 0.01;

struct PathWeight {
    log_l: f64,
    running: f64,
}

fn path_weights(spec: &GameSpec, u: &Strategy, v: &Strategy, bundle: &PathBundle, forward: &ForwardPaths) -> Result<Vec<PathWeight>> {
    spec.check_shapes(bundle, forward)?;
    let (d, k, steps, dt) = (spec.d(), spec.k(), bundle.steps(), bundle.dt());
    (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut s = Scratch::new(d, k);
            let mut acc = PathWeight { log_l: 0.0, running: 0.0 };
            for i in 0..steps {
                let t = bundle.grid().t(i);
                let x = forward.x(p, i);
                let local = LocalGame::new(spec, t, x)?;
                let (uc, vc) = (u.at(p, i), v.at(p, i));
                local.factors(uc, vc, &mut s);
                let h_now = bundle.h(p, i);
                for (&hj, &q) in h_now.iter().zip(&s.jump) {
                    if hj == 0 && !(q > -1.0 + JUMP_FACTOR_MARGIN) {
                        return Err(Error::Constraint(format!("jump factor {q} not above -1 on path {p} at node {i} (u={uc:?}, v={vc:?})")));
                    }
                }
                acc.log_l += log_exponential_step(1.0, 0.0, &s.drift, &s.jump, bundle.db(p, i), h_now, bundle.h(p, i + 1), bundle.gamma(i), dt);
                acc.running += local.running_cost(uc, vc) * dt;
            }
            if !acc.log_l.is_finite() || !acc.running.is_finite() {
                return Err(Error::Numerical(format!("non-finite weight or cost on path {p}")));
            }
            Ok(acc)
        })
        .collect()
}

/// Terminal density `L_T = dP^{u,v}/dP` per path.
pub fn girsanov_weights(spec: &GameSpec, u: &Strategy, v: &Strategy, bundle: &PathBundle, forward: &ForwardPaths) -> Result<Vec<f64>> {
    Ok(path_weights(spec, u, v, bundle, forward)?.iter().map(|w| w.log_l.exp()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// `E[L_T (int f dt + h)]`.
    pub cost: MeanEstimate,
    /// `E[L_T]`, which should be one.
    pub weight_mean: MeanEstimate,
    /// `(sum L)^2 / sum L^2`.
    pub ess: f64,
    pub ess_fraction: f64,
    pub unreliable: bool,
}

/// Monte Carlo cost of `(u, v)` under the weighted measure.
pub fn evaluate_cost(spec: &GameSpec, u: &Strategy, v: &Strategy, bundle: &PathBundle, forward: &ForwardPaths) -> Result<CostEstimate> {
    let weights = path_weights(spec, u, v, bundle, forward)?;
    let terminal = spec.terminal_cost.evaluate(bundle, Some(forward))?;
    let l: Vec<f64> = weights.iter().map(|w| w.log_l.exp()).collect();
    let samples: Vec<f64> = weights.iter().zip(&l).zip(&terminal).map(|((w, li), h)| li * (w.running + h)).collect();
    let s1: f64 = l.iter().sum();
    let s2: f64 = l.iter().map(|x| x * x).sum();
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
    let ess_fraction = ess / l.len() as f64;
    let unreliable = ess_fraction < MIN_ESS_FRACTION;
    if unreliable {
        log::warn!("effective sample size {ess:.1} is below {:.0}% of {} paths", MIN_ESS_FRACTION * 100.0, l.len());
    }
    Ok(CostEstimate {
        cost: MeanEstimate::from_samples(&samples),
        weight_mean: MeanEstimate::from_samples(&l),
        ess,
        ess_fraction,
        unreliable,
    })
}

/// `-ln(E[L_T 1{tau_j > T}]) / T`, the default intensity of name `j` seen
/// under the weighted measure (constant-intensity case), with a delta-method
/// standard error.
pub fn weighted_intensity(weights: &[f64], bundle: &PathBundle, j: usize) -> Result<MeanEstimate> {
    if weights.len() != bundle.n_paths() {
        return Err(Error::Dimension { what: "weights", expected: bundle.n_paths(), got: weights.len() });
    }
    if j >= bundle.k() {
        return Err(Error::InvalidInput(format!("name {j} out of range (k = {})", bundle.k())));
    }
    let steps = bundle.steps();
    let horizon = bundle.grid().horizon();
    let survive: Vec<f64> = weights.iter().enumerate().map(|(p, w)| if bundle.alive(p, steps, j) { *w } else { 0.0 }).collect();
    let est = MeanEstimate::from_samples(&survive);
    if !(est.mean > 0.0) {
        return Err(Error::Numerical("no weighted survivors".into()));
    }
    Ok(MeanEstimate { mean: -est.mean.ln() / horizon, se: est.se / (est.mean * horizon), n: est.n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// `"u"` or `"v"`: which player deviates.
    pub player: String,
    pub control: Vec<f64>,
    pub cost: CostEstimate,
    /// `J(u*, v) - J*` for a `v` deviation, `J* - J(u, v*)` for a `u` deviation;
    /// non-positive at a saddle.
    pub margin: f64,
    pub tol: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleVerification {
    /// Weighted Monte Carlo cost of the saddle feedback pair.
    pub value: CostEstimate,
    /// BSDE value at time zero.
    pub bsde_value: MeanEstimate,
    pub cross_gap: f64,
    pub cross_tol: f64,
    pub cross_ok: bool,
    pub perturbations: Vec<Perturbation>,
    pub all_hold: bool,
}

/// Checks `J(u*, v) <= J(u*, v*) <= J(u, v*)` for `n` random constant
/// deviations of each player, and compares the BSDE value with the weighted
/// Monte Carlo cost of `(u*, v*)`.
pub fn verify_saddle<R: Rng>(
    spec: &GameSpec,
    game: &GameSolution,
    bundle: &PathBundle,
    forward: &ForwardPaths,
    n: usize,
    rng: &mut R,
) -> Result<SaddleVerification> {
    let dt = bundle.dt();
    let (us, vs) = (&game.u_strategy, &game.v_strategy);
    let value = evaluate_cost(spec, us, vs, bundle, forward)?;
    let cross_gap = (game.value.mean - value.cost.mean).abs();
    let cross_tol = 3.0 * combined_se(&[game.value.se, value.cost.se]) + 5.0 * dt;
    let mut perturbations = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let v = spec.v_grid.points[rng.random_range(0..spec.v_grid.len())].clone();
        let cost = evaluate_cost(spec, us, &Strategy::Constant(v.clone()), bundle, forward)?;
        let margin = cost.cost.mean - value.cost.mean;
        let tol = 3.0 * combined_se(&[cost.cost.se, value.cost.se]) + 5.0 * dt;
        perturbations.push(Perturbation { player: "v".into(), control: v, cost, margin, tol, holds: margin <= tol });
    }
    for _ in 0..n {
        let u = spec.u_grid.points[rng.random_range(0..spec.u_grid.len())].clone();
        let cost = evaluate_cost(spec, &Strategy::Constant(u.clone()), vs, bundle, forward)?;
        let margin = value.cost.mean - cost.cost.mean;
        let tol = 3.0 * combined_se(&[cost.cost.se, value.cost.se]) + 5.0 * dt;
        perturbations.push(Perturbation { player: "u".into(), control: u, cost, margin, tol, holds: margin <= tol });
    }
    let all_hold = perturbations.iter().all(|p| p.holds);
    Ok(SaddleVerification {
        bsde_value: game.value,
        cross_ok: cross_gap <= cross_tol,
        value,
        cross_gap,
        cross_tol,
        perturbations,
        all_hold,
    })
}
