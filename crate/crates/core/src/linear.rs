//! Linear BSDEs with default risk: adjoint pricing, the generator handed to
//! the general solver, and the three-asset replication strategy.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{DriverSpec, TerminalSpec};
use crate::error::{Error, Result};
use crate::jump_ito::{constant_fn, stochastic_exponential, ExponentialForm, ExponentialSpec, ForwardPaths, TimeFn};
use crate::kernel::{PathBundle, TimeGrid};
use crate::stats::MeanEstimate;

/// `dY = (a Y + b Z + c 1{pre} gamma zeta) dt + Z dB + zeta dM`, `Y_T = claim`.
#[derive(Clone)]
pub struct LinearBsdeSpec {
    pub a: TimeFn,
    pub b: Vec<TimeFn>,
    pub c: Vec<TimeFn>,
    pub claim: TerminalSpec,
}

impl std::fmt::Debug for LinearBsdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearBsdeSpec")
            .field("d", &self.b.len())
            .field("k", &self.c.len())
            .field("claim", &self.claim)
            .finish_non_exhaustive()
    }
}

/// Largest admissible jump coefficient.
pub const C_CEILING: f64 = 1.0 - 1e-9;

impl LinearBsdeSpec {
    pub fn constant(a: f64, b: &[f64], c: &[f64], claim: TerminalSpec) -> Self {
        Self {
            a: constant_fn(a),
            b: b.iter().map(|&v| constant_fn(v)).collect(),
            c: c.iter().map(|&v| constant_fn(v)).collect(),
            claim,
        }
    }

    /// Checks finiteness and `c_j < 1 - 1e-9` at every grid node.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.claim.m != 1 {
            return Err(Error::InvalidInput("linear claims are scalar".into()));
        }
        for &t in grid.nodes() {
            let a = (self.a)(t);
            if !a.is_finite() || self.b.iter().any(|f| !f(t).is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite coefficient at t = {t}")));
            }
            for (j, c) in self.c.iter().enumerate() {
                let v = c(t);
                if !(v < C_CEILING) {
                    return Err(Error::Constraint(format!("jump coefficient c_{j}({t}) = {v} must be below 1")));
                }
            }
        }
        Ok(())
    }

    fn sup_norms(&self, grid: &TimeGrid) -> (f64, f64, f64) {
        let mut sa: f64 = 0.0;
        let mut sb: f64 = 0.0;
        let mut sc: f64 = 0.0;
        for &t in grid.nodes() {
            sa = sa.max((self.a)(t).abs());
            sb = sb.max(self.b.iter().map(|f| f(t).powi(2)).sum::<f64>().sqrt());
            sc = sc.max(self.c.iter().map(|f| f(t).powi(2)).sum::<f64>().sqrt());
        }
        (sa, sb, sc)
    }

    fn check_bundle(&self, bundle: &PathBundle) -> Result<()> {
        if self.b.len() != bundle.d() || self.c.len() != bundle.k() {
            return Err(Error::InvalidInput(format!(
                "spec has d={} k={}, bundle has d={} k={}",
                self.b.len(),
                self.c.len(),
                bundle.d(),
                bundle.k()
            )));
        }
        self.validate(bundle.grid())
    }
}

/// `Y_0 = E[Q_T xi]` with `dQ = -Q_-(a dt + b dB + c dM)`, `Q_0 = 1`.
pub fn adjoint_price(spec: &LinearBsdeSpec, bundle: &PathBundle, forward: Option<&ForwardPaths>) -> Result<MeanEstimate> {
    spec.check_bundle(bundle)?;
    let exp_spec = ExponentialSpec { a: spec.a.clone(), b: spec.b.clone(), c: spec.c.clone(), form: ExponentialForm::Pricing };
    let q = stochastic_exponential(&exp_spec, bundle)?;
    let xi = spec.claim.evaluate(bundle, forward)?;
    let weighted: Vec<f64> = (0..bundle.n_paths()).into_par_iter().map(|p| q.terminal(p) * xi[p]).collect();
    Ok(MeanEstimate::from_samples(&weighted))
}

/// Generator `g = -(a y + b.z + sum_j c_j 1{pre} gamma_j zeta_j)` for the
/// general solver, with `C = max(sup|a|, sup|b|, sup|c| sqrt(gamma_max))`.
///
/// The comparison quotient of this generator in `zeta_j` is `-c_j`, so the
/// condition-(c) flag holds exactly when every `c_j < 1`.
pub fn linear_driver(spec: &LinearBsdeSpec, grid: &TimeGrid, gamma_max: f64) -> DriverSpec {
    let (sa, sb, sc) = spec.sup_norms(grid);
    let lipschitz = sa.max(sb).max(sc * gamma_max.max(0.0).sqrt());
    let c_ok = grid.nodes().iter().all(|&t| spec.c.iter().all(|f| f(t) < C_CEILING));
    let (a, b, c) = (spec.a.clone(), spec.b.clone(), spec.c.clone());
    let g = Arc::new(move |ctx: &crate::engine::NodeContext, y: &[f64], z: &[f64], zeta: &[f64], out: &mut [f64]| {
        let t = ctx.t;
        let mut v = a(t) * y[0];
        for (l, bl) in b.iter().enumerate() {
            v += bl(t) * z[l];
        }
        for (j, cj) in c.iter().enumerate() {
            let w = ctx.active_intensity(j);
            if w != 0.0 {
                v += cj(t) * w * zeta[j];
            }
        }
        out[0] = -v;
    });
    DriverSpec::new(1, lipschitz, g).with_flags(true, true, c_ok).with_label("linear")
}

/// Price of the claim `xi0 1{tau > T} + xi1 1{tau <= T}` for constant
/// coefficients, one name and constant intensity:
/// `e^{-aT} [xi0 e^{-(1-c) gamma T} + xi1 (1 - e^{-(1-c) gamma T})]`.
pub fn closed_form_price(a: f64, c: f64, gamma: f64, horizon: f64, xi_survive: f64, xi_default: f64) -> f64 {
    let s = (-(1.0 - c) * gamma * horizon).exp();
    (-a * horizon).exp() * (xi_survive * s + xi_default * (1.0 - s))
}

/// Three assets `dS^i = S^i_-(mu_i dt + nu_i dB + kappa_i dM)`, one Brownian
/// motion, one default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub mu: [f64; 3],
    pub nu: [f64; 3],
    pub kappa: [f64; 3],
}

impl MarketSpec {
    /// `(nu2 - nu1)(kappa3 - kappa1) - (kappa2 - kappa1)(nu3 - nu1)`.
    pub fn determinant(&self) -> f64 {
        let (n, k) = (&self.nu, &self.kappa);
        (n[1] - n[0]) * (k[2] - k[0]) - (k[1] - k[0]) * (n[2] - n[0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.iter().chain(&self.nu).chain(&self.kappa).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("market coefficients must be finite".into()));
        }
        if let Some(k) = self.kappa.iter().find(|&&k| k < -1.0) {
            return Err(Error::Constraint(format!("jump coefficient {k} below -1")));
        }
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::Constraint(format!("replication system is singular: determinant = {det:e}")));
        }
        Ok(())
    }

    /// Coefficients `(a, b, c)` of the wealth equation implied by the market;
    /// `c` divides by the intensity, which must be positive.
    pub fn linear_coefficients(&self, gamma: f64) -> Result<(f64, f64, f64)> {
        self.validate()?;
        if !(gamma > 0.0) {
            return Err(Error::InvalidInput(format!("market-implied c needs gamma > 0, got {gamma}")));
        }
        let (mu, nu, ka) = (&self.mu, &self.nu, &self.kappa);
        let det = self.determinant();
        // theta2 = a2 Y + b2 Z + c2 zeta, theta3 likewise
        let (a2, b2, c2) = ((ka[0] * (nu[2] - nu[0]) - nu[0] * (ka[2] - ka[0])) / det, (ka[2] - ka[0]) / det, -(nu[2] - nu[0]) / det);
        let (a3, b3, c3) = ((nu[0] * (ka[1] - ka[0]) - ka[0] * (nu[1] - nu[0])) / det, -(ka[1] - ka[0]) / det, (nu[1] - nu[0]) / det);
        let (d2, d3) = (mu[1] - mu[0], mu[2] - mu[0]);
        Ok((mu[0] + d2 * a2 + d3 * a3, d2 * b2 + d3 * b3, (d2 * c2 + d3 * c3) / gamma))
    }
}

/// Holdings `(theta1, theta2, theta3)` replicating `(y, z, zeta)`:
/// `nu1 y + theta2 (nu2 - nu1) + theta3 (nu3 - nu1) = z`,
/// `kappa1 y + theta2 (kappa2 - kappa1) + theta3 (kappa3 - kappa1) = zeta 1{pre}`,
/// `theta1 = y - theta2 - theta3`.
pub fn replication_strategy(market: &MarketSpec, y: f64, z: f64, zeta: f64, pre_default: bool) -> Result<[f64; 3]> {
    market.validate()?;
    let (nu, ka) = (&market.nu, &market.kappa);
    let det = market.determinant();
    let r1 = z - nu[0] * y;
    let r2 = if pre_default { zeta } else { 0.0 } - ka[0] * y;
    let theta2 = (r1 * (ka[2] - ka[0]) - r2 * (nu[2] - nu[0])) / det;
    let theta3 = (r2 * (nu[1] - nu[0]) - r1 * (ka[1] - ka[0])) / det;
    Ok([y - theta2 - theta3, theta2, theta3])
}
