use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{solve, BsdeSolution, DriverSpec, NodeContext, SolverConfig, TerminalSpec};
use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::PathBundle;
use crate::linear::{adjoint_price, LinearBsdeSpec};
use crate::regression::RegressionBasis;
use crate::stats::MeanEstimate;

/// One model `(u, v, w)`: discount rate, Brownian drift and jump factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub u: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

/// Finite set of candidate models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSet {
    pub points: Vec<ThetaPoint>,
}

impl ThetaSet {
    pub fn singleton(u: f64, v: Vec<f64>, w: Vec<f64>) -> Self {
        Self { points: vec![ThetaPoint { u, v, w }] }
    }

    /// Product of `n` equally spaced values per range, scalar `v` and `w`.
    pub fn product(u: (f64, f64), v: (f64, f64), w: (f64, f64), n: usize) -> Self {
        let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
            if n <= 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        };
        let mut points = Vec::new();
        for &a in &axis(u) {
            for &b in &axis(v) {
                for &c in &axis(w) {
                    points.push(ThetaPoint { u: a, v: vec![b], w: vec![c] });
                }
            }
        }
        Self { points }
    }

    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidInput("empty parameter set".into()));
        }
        for (n, p) in self.points.iter().enumerate() {
            if p.v.len() != d || p.w.len() != k {
                return Err(Error::InvalidInput(format!("parameter {n} has wrong dimensions")));
            }
            if !p.u.is_finite() || p.v.iter().chain(&p.w).any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("parameter {n} is not finite")));
            }
            if let Some(w) = p.w.iter().find(|&&w| !(w > -1.0 + super::JUMP_FACTOR_MARGIN)) {
                return Err(Error::Constraint(format!("parameter {n}: jump factor {w} must exceed -1")));
            }
        }
        Ok(())
    }

    /// Linear pricing problem of one member, for which the robust generator
    /// reduces to `linear_driver` with `(a, b, c) = (-u, -v, -w)`.
    pub fn linear_spec(&self, index: usize, claim: TerminalSpec) -> LinearBsdeSpec {
        let p = &self.points[index];
        let b: Vec<f64> = p.v.iter().map(|x| -x).collect();
        let c: Vec<f64> = p.w.iter().map(|x| -x).collect();
        LinearBsdeSpec::constant(-p.u, &b, &c, claim)
    }
}

/// `g = max over the set of (u y + v.z + sum_j w_j 1{pre} gamma_j zeta_j)`.
pub fn robust_driver(set: &ThetaSet, gamma_max: f64) -> DriverSpec {
    let lipschitz = set
        .points
        .iter()
        .map(|p| {
            let v = p.v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let w = p.w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            p.u.abs().max(v).max(w * gamma_max.max(0.0).sqrt())
        })
        .fold(0.0, f64::max);
    let points = set.points.clone();
    let g = Arc::new(move |ctx: &NodeContext, y: &[f64], z: &[f64], zeta: &[f64], out: &mut [f64]| {
        let mut best = f64::NEG_INFINITY;
        for p in &points {
            let mut acc = p.u * y[0];
            for (l, vl) in p.v.iter().enumerate() {
                acc += vl * z[l];
            }
            for (j, wj) in p.w.iter().enumerate() {
                let act = ctx.active_intensity(j);
                if act != 0.0 {
                    acc += wj * act * zeta[j];
                }
            }
            if acc > best {
                best = acc;
            }
        }
        out[0] = best;
    });
    DriverSpec::new(1, lipschitz, g).with_flags(true, true, true).with_label("robust")
}

#[derive(Debug, Clone)]
pub struct RobustPrice {
    pub solution: BsdeSolution,
    pub price: MeanEstimate,
    /// Adjoint-method price of every member of the set.
    pub member_prices: Vec<MeanEstimate>,
}

/// Upper price `sup_theta E^theta[discounted claim]` via the robust BSDE,
/// together with the individual member prices.
pub fn robust_price(
    set: &ThetaSet,
    claim: &TerminalSpec,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    basis: &RegressionBasis,
    gamma_max: f64,
) -> Result<RobustPrice> {
    set.validate(bundle.d(), bundle.k())?;
    let driver = robust_driver(set, gamma_max);
    let solution = solve(&driver, claim, bundle, forward, basis, &SolverConfig::default())?;
    let member_prices = (0..set.points.len())
        .map(|n| adjoint_price(&set.linear_spec(n, claim.clone()), bundle, forward))
        .collect::<Result<Vec<_>>>()?;
    let price = MeanEstimate { mean: solution.y0(), se: solution.y0_se(), n: solution.n_paths() };
    Ok(RobustPrice { solution, price, member_prices })
}
