//! Contraction diagnostics in the weighted norm
//! `E int (|y|^2 + |z|^2 + sum_j |zeta_j|^2 1{pre} gamma_j) e^{beta s} ds`.

use serde::{Deserialize, Serialize};

use super::driver::DriverSpec;
use super::solution::NodeFields;
use super::solver::{freeze_driver, solve_frozen, SolverConfig};
use super::terminal::TerminalSpec;
use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::PathBundle;
use crate::regression::RegressionBasis;
use crate::stats::{pairwise_sum, MeanEstimate};

fn path_integrals(fields: &NodeFields, bundle: &PathBundle, beta: f64) -> Vec<[f64; 3]> {
    let (m, d, k) = (fields.m(), fields.d(), fields.k());
    let dt = bundle.dt();
    let _ = d;
    (0..fields.n_paths())
        .map(|p| {
            let mut acc = [0.0; 3];
            for i in 0..fields.steps() {
                let w = (beta * bundle.grid().t(i)).exp() * dt;
                acc[0] += fields.y(p, i).iter().map(|v| v * v).sum::<f64>() * w;
                acc[1] += fields.z(p, i).iter().map(|v| v * v).sum::<f64>() * w;
                let zeta = fields.zeta(p, i);
                let mut s = 0.0;
                for c in 0..m {
                    for j in 0..k {
                        if bundle.alive(p, i, j) {
                            s += zeta[c * k + j].powi(2) * bundle.gamma(i)[j];
                        }
                    }
                }
                acc[2] += s * w;
            }
            acc
        })
        .collect()
}

/// Squared weighted norm of the fields, as a Monte Carlo mean with its SE.
pub fn beta_norm(fields: &NodeFields, beta: f64, bundle: &PathBundle) -> Result<MeanEstimate> {
    if fields.n_paths() != bundle.n_paths() || fields.steps() != bundle.steps() || fields.k() != bundle.k() {
        return Err(Error::InvalidInput("fields do not live on this bundle".into()));
    }
    let per_path: Vec<f64> = path_integrals(fields, bundle, beta).iter().map(|a| a[0] + a[1] + a[2]).collect();
    Ok(MeanEstimate::from_samples(&per_path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub beta: f64,
    /// `||U^{n+1} - U^n||_beta` (square root of the weighted norm).
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub ratio_sd: f64,
    /// The sequence reached the distance floor.
    pub converged: bool,
    /// `y0` of the last iterate.
    pub y0: f64,
}

/// Iterates the driver-frozen map from the zero triple and records the
/// distances between successive iterates.
pub fn picard_diagnostics(
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    basis: &RegressionBasis,
    config: &SolverConfig,
) -> Result<PicardReport> {
    config.validate()?;
    if config.picard_iters < 3 {
        return Err(Error::InvalidInput(format!("picard_iters must be at least 3, got {}", config.picard_iters)));
    }
    let m = driver.m;
    let beta = config.beta_for(driver.lipschitz);
    let xi = terminal.evaluate(bundle, forward)?;
    let mut current = NodeFields::for_bundle(bundle, m);
    let mut distances = Vec::new();
    let mut converged = false;
    for _ in 0..config.picard_iters {
        let g0 = freeze_driver(driver, &current, bundle, forward);
        if g0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("driver produced non-finite values during Picard iteration".into()));
        }
        let next = solve_frozen(&g0, &xi, m, bundle, forward, basis)?;
        let dist = beta_norm(&next.difference(&current)?, beta, bundle)?.mean.max(0.0).sqrt();
        current = next;
        if dist < config.distance_floor {
            converged = true;
            break;
        }
        distances.push(dist);
    }
    let ratios: Vec<f64> = distances.windows(2).map(|w| w[1] / w[0]).collect();
    let (max_ratio, mean_ratio, ratio_sd) = if ratios.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / ratios.len() as f64;
        (ratios.iter().cloned().fold(0.0, f64::max), mean, var.sqrt())
    };
    let n = bundle.n_paths();
    let y0 = pairwise_sum(&(0..n).map(|p| current.y(p, 0)[0]).collect::<Vec<_>>()) / n as f64;
    Ok(PicardReport { beta, distances, ratios, max_ratio, mean_ratio, ratio_sd, converged, y0 })
}

/// Both sides of the weighted energy estimate for a driver-frozen solve:
/// `|y_0|^2 + E int (beta/2 |y|^2 + |z|^2 + |zeta|_tau^2) e^{beta s} ds`
/// against `E |xi|^2 e^{beta T} + (2/beta) E int |g0|^2 e^{beta s} ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`.
    pub ratio: f64,
}

pub fn apriori_estimate(
    g0: &[f64],
    terminal: &TerminalSpec,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    basis: &RegressionBasis,
    beta: f64,
) -> Result<AprioriReport> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let m = terminal.m;
    let xi = terminal.evaluate(bundle, forward)?;
    let fields = solve_frozen(g0, &xi, m, bundle, forward, basis)?;
    let (n, steps) = (bundle.n_paths(), bundle.steps());
    let dt = bundle.dt();
    let parts = path_integrals(&fields, bundle, beta);
    let lhs_paths: Vec<f64> = (0..n)
        .map(|p| {
            let y0: f64 = fields.y(p, 0).iter().map(|v| v * v).sum();
            y0 + 0.5 * beta * parts[p][0] + parts[p][1] + parts[p][2]
        })
        .collect();
    let t_end = bundle.grid().horizon();
    let rhs_paths: Vec<f64> = (0..n)
        .map(|p| {
            let xi2: f64 = xi[p * m..(p + 1) * m].iter().map(|v| v * v).sum();
            let mut g2 = 0.0;
            for i in 0..steps {
                let w = (beta * bundle.grid().t(i)).exp() * dt;
                g2 += g0[(i * n + p) * m..(i * n + p + 1) * m].iter().map(|v| v * v).sum::<f64>() * w;
            }
            xi2 * (beta * t_end).exp() + 2.0 / beta * g2
        })
        .collect();
    let lhs = pairwise_sum(&lhs_paths) / n as f64;
    let rhs = pairwise_sum(&rhs_paths) / n as f64;
    Ok(AprioriReport { beta, lhs, rhs, ratio: lhs / rhs })
}
