//! Backward induction with regression conditional expectations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::driver::{DriverSpec, NodeContext};
use super::solution::{BsdeSolution, NodeFields, SchemeMeta};
use super::terminal::TerminalSpec;
use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::PathBundle;
use crate::regression::{NodeRegression, RegressionBasis};
use crate::stats::{pairwise_sum, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Weight of the contraction norm; `None` means `12 (C^2 + 1)`.
    pub beta: Option<f64>,
    pub picard_iters: usize,
    /// Implicitness of the driver term, in `[0, 1]`.
    pub theta: f64,
    /// Relative tolerance of the per-path implicit fixed point.
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
    /// Picard distances below this end the sequence.
    pub distance_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: None,
            picard_iters: 6,
            theta: 1.0,
            fixed_point_tol: 1e-13,
            max_fixed_point_iters: 50,
            distance_floor: 1e-14,
        }
    }
}

impl SolverConfig {
    pub fn beta_for(&self, lipschitz: f64) -> f64 {
        self.beta.unwrap_or(12.0 * (lipschitz * lipschitz + 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidInput(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidInput(format!("beta must be positive, got {b}")));
            }
        }
        if self.max_fixed_point_iters == 0 || !(self.fixed_point_tol > 0.0) {
            return Err(Error::InvalidInput("fixed-point settings must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional expectation and martingale coefficients of `Y_{i+1}` at node `i`.
pub(crate) struct NodeProjection {
    /// `E[Y_{i+1} | G_i]`, flat `p * m + c`.
    pub e: Vec<f64>,
    /// flat `(p * m + c) * d + l`.
    pub z: Vec<f64>,
    /// flat `(p * m + c) * k + j`.
    pub zeta: Vec<f64>,
}

/// `Z = E[(Y - E Y) dB | G_i] / dt` and
/// `zeta^j = E[(Y - E Y) dM^j | G_i] / V^j`, where `V^j` is the sample variance
/// of `dM^j` inside the path's default bucket. `zeta` is 0 after default and
/// wherever that variance vanishes.
pub(crate) fn project_node(reg: &NodeRegression, bundle: &PathBundle, next: &[f64], m: usize, i: usize) -> NodeProjection {
    let (n, d, k) = (bundle.n_paths(), bundle.d(), bundle.k());
    let dt = bundle.dt();
    let mut e = vec![0.0; n * m];
    let mut z = vec![0.0; n * m * d];
    let mut zeta = vec![0.0; n * m * k];
    let mut vals = vec![0.0; n];
    let mut prod = vec![0.0; n];
    // dM given G_i depends on the default bucket only, so its conditional
    // variance is estimated by bucket
    let mut jump_var = vec![0.0; n * k];
    for (_, paths) in reg.bucket_paths() {
        for j in 0..k {
            let xs: Vec<f64> = paths.iter().map(|&p| bundle.dm(p, i)[j]).collect();
            let mean = pairwise_sum(&xs) / xs.len() as f64;
            let var = pairwise_sum(&xs.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>()) / xs.len() as f64;
            for &p in paths {
                jump_var[p * k + j] = var;
            }
        }
    }
    for c in 0..m {
        for p in 0..n {
            vals[p] = next[p * m + c];
        }
        let fitted = reg.project(&vals);
        let centered: Vec<f64> = vals.iter().zip(&fitted).map(|(v, f)| v - f).collect();
        for p in 0..n {
            e[p * m + c] = fitted[p];
        }
        for l in 0..d {
            for p in 0..n {
                prod[p] = centered[p] * bundle.db(p, i)[l];
            }
            let cov = reg.project(&prod);
            for p in 0..n {
                z[(p * m + c) * d + l] = cov[p] / dt;
            }
        }
        for j in 0..k {
            if bundle.step_jump_variance(i, j) <= 0.0 {
                continue;
            }
            for p in 0..n {
                prod[p] = centered[p] * bundle.dm(p, i)[j];
            }
            let cov = reg.project(&prod);
            for p in 0..n {
                let var = jump_var[p * k + j];
                if bundle.alive(p, i, j) && var > 0.0 {
                    zeta[(p * m + c) * k + j] = cov[p] / var;
                }
            }
        }
    }
    NodeProjection { e, z, zeta }
}

/// Martingale coefficients of a scalar `Y_{i+1}` at node `i`:
/// `Z` flat `p * d + l`, `zeta` flat `p * k + j`.
pub fn extract_martingale_coeffs(
    y_next: &[f64],
    node: usize,
    bundle: &PathBundle,
    basis: &RegressionBasis,
    forward: Option<&ForwardPaths>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if node >= bundle.steps() {
        return Err(Error::InvalidInput(format!("node {node} has no forward increment")));
    }
    if y_next.len() != bundle.n_paths() {
        return Err(Error::Dimension { what: "values per path", expected: bundle.n_paths(), got: y_next.len() });
    }
    let reg = NodeRegression::new(bundle, forward, basis, node)?;
    let proj = project_node(&reg, bundle, y_next, 1, node);
    Ok((proj.z, proj.zeta))
}

fn check_forward(bundle: &PathBundle, forward: Option<&ForwardPaths>) -> Result<()> {
    if let Some(f) = forward {
        if f.n_paths() != bundle.n_paths() || f.steps() != bundle.steps() {
            return Err(Error::Dimension { what: "forward paths vs bundle", expected: bundle.n_paths(), got: f.n_paths() });
        }
    }
    Ok(())
}

fn meta(bundle: &PathBundle, basis: &RegressionBasis, theta: f64) -> SchemeMeta {
    SchemeMeta {
        horizon: bundle.grid().horizon(),
        steps: bundle.steps(),
        n_paths: bundle.n_paths(),
        seed: bundle.seed(),
        basis: *basis,
        theta,
    }
}

/// `y0` as the mean of `Y_0`. Its standard error comes from the pathwise
/// estimator `xi + sum_i (Y_i - E[Y_{i+1} | G_i])`, whose sample mean equals
/// `y0` because regression residuals sum to zero in every bucket.
fn summarize(fields: NodeFields, pathwise: Vec<f64>, meta: SchemeMeta) -> BsdeSolution {
    let (n, m) = (fields.n_paths(), fields.m());
    let mut y0 = Vec::with_capacity(m);
    let mut y0_se = Vec::with_capacity(m);
    for c in 0..m {
        let at0: Vec<f64> = (0..n).map(|p| fields.y(p, 0)[c]).collect();
        y0.push(pairwise_sum(&at0) / n as f64);
        let est: Vec<f64> = (0..n).map(|p| pathwise[p * m + c]).collect();
        y0_se.push(if n > 1 { sample_std(&est) / (n as f64).sqrt() } else { 0.0 });
    }
    BsdeSolution { fields, y0, y0_se, y0_paths: pathwise, meta }
}

/// Solves `Y_t = xi + int_t^T g ds - int Z dB - int zeta dM` on the bundle.
///
/// At node `i`, with `E = E[Y_{i+1} | G_i]`,
/// `Y_i = E + (1 - theta) g(t_i, E, Z_i, zeta_i) dt + theta g(t_i, Y_i, Z_i, zeta_i) dt`,
/// the implicit part being solved per path by fixed-point iteration.
pub fn solve(
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    basis: &RegressionBasis,
    config: &SolverConfig,
) -> Result<BsdeSolution> {
    config.validate()?;
    basis.validate()?;
    check_forward(bundle, forward)?;
    let m = driver.m;
    if terminal.m != m {
        return Err(Error::Dimension { what: "terminal components", expected: m, got: terminal.m });
    }
    let dt = bundle.dt();
    let theta = config.theta;
    if driver.depends_on_y && theta * dt * driver.lipschitz >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "implicit step not contractive: theta * dt * C = {}",
            theta * dt * driver.lipschitz
        )));
    }
    let (d, k, steps) = (bundle.d(), bundle.k(), bundle.steps());
    let mut fields = NodeFields::for_bundle(bundle, m);
    let xi = terminal.evaluate(bundle, forward)?;
    fields.y_node_mut(steps).copy_from_slice(&xi);
    let mut pathwise = xi;

    for i in (0..steps).rev() {
        let reg = NodeRegression::new(bundle, forward, basis, i)?;
        let proj = project_node(&reg, bundle, fields.y_node(i + 1), m, i);
        let t = bundle.grid().t(i);
        fields.y_node_mut(i).par_chunks_mut(m).enumerate().try_for_each(|(p, out)| -> Result<()> {
            let ctx = NodeContext::from_bundle(bundle, forward, p, i);
            let e = &proj.e[p * m..(p + 1) * m];
            let z = &proj.z[p * m * d..(p + 1) * m * d];
            let zeta = &proj.zeta[p * m * k..(p + 1) * m * k];
            implicit_step(driver, &ctx, e, z, zeta, theta, dt, config, out)?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite Y on path {p} at node {i} (t = {t})")));
            }
            Ok(())
        })?;
        for ((acc, y), e) in pathwise.iter_mut().zip(fields.y_node(i)).zip(&proj.e) {
            *acc += y - e;
        }
        fields.z_node_mut(i).copy_from_slice(&proj.z);
        fields.zeta_node_mut(i).copy_from_slice(&proj.zeta);
    }
    Ok(summarize(fields, pathwise, meta(bundle, basis, theta)))
}

#[allow(clippy::too_many_arguments)]
fn implicit_step(
    driver: &DriverSpec,
    ctx: &NodeContext,
    e: &[f64],
    z: &[f64],
    zeta: &[f64],
    theta: f64,
    dt: f64,
    config: &SolverConfig,
    out: &mut [f64],
) -> Result<()> {
    let m = e.len();
    let mut g = vec![0.0; m];
    let mut base = e.to_vec();
    if theta < 1.0 || !driver.depends_on_y {
        driver.eval(ctx, e, z, zeta, &mut g);
        for c in 0..m {
            base[c] += (1.0 - theta) * g[c] * dt;
        }
        if theta == 0.0 || !driver.depends_on_y {
            for c in 0..m {
                out[c] = base[c] + theta * g[c] * dt;
            }
            return Ok(());
        }
    }
    out.copy_from_slice(e);
    for _ in 0..config.max_fixed_point_iters {
        driver.eval(ctx, out, z, zeta, &mut g);
        let mut change: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for c in 0..m {
            let next = base[c] + theta * g[c] * dt;
            change = change.max((next - out[c]).abs());
            scale = scale.max(next.abs());
            out[c] = next;
        }
        if !change.is_finite() {
            break;
        }
        if change <= config.fixed_point_tol * (1.0 + scale) {
            return Ok(());
        }
    }
    Err(Error::Numerical(format!(
        "implicit fixed point did not converge in {} iterations on path {} at node {} (last iterate {:?})",
        config.max_fixed_point_iters, ctx.path, ctx.node, out
    )))
}

/// Solves the BSDE with a driver frozen to the given values
/// (`g0` node-major, flat `(i * n + p) * m + c` for `i < N`):
/// `Y_i = E[Y_{i+1} | G_i] + g0_i dt`.
pub fn solve_frozen(
    g0: &[f64],
    terminal: &[f64],
    m: usize,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    basis: &RegressionBasis,
) -> Result<NodeFields> {
    check_forward(bundle, forward)?;
    let (n, steps) = (bundle.n_paths(), bundle.steps());
    if g0.len() != steps * n * m {
        return Err(Error::Dimension { what: "frozen driver values", expected: steps * n * m, got: g0.len() });
    }
    if terminal.len() != n * m {
        return Err(Error::Dimension { what: "terminal values", expected: n * m, got: terminal.len() });
    }
    let dt = bundle.dt();
    let mut fields = NodeFields::for_bundle(bundle, m);
    fields.y_node_mut(steps).copy_from_slice(terminal);
    for i in (0..steps).rev() {
        let reg = NodeRegression::new(bundle, forward, basis, i)?;
        let proj = project_node(&reg, bundle, fields.y_node(i + 1), m, i);
        let g_i = &g0[i * n * m..(i + 1) * n * m];
        for (o, (e, g)) in fields.y_node_mut(i).iter_mut().zip(proj.e.iter().zip(g_i)) {
            *o = e + g * dt;
        }
        fields.z_node_mut(i).copy_from_slice(&proj.z);
        fields.zeta_node_mut(i).copy_from_slice(&proj.zeta);
    }
    Ok(fields)
}

/// Driver values `g(t_i, y_i, z_i, zeta_i)` along given fields, node-major.
pub fn freeze_driver(
    driver: &DriverSpec,
    fields: &NodeFields,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
) -> Vec<f64> {
    let (n, m, steps) = (bundle.n_paths(), driver.m, bundle.steps());
    let mut g0 = vec![0.0; steps * n * m];
    g0.par_chunks_mut(m).enumerate().for_each(|(idx, out)| {
        let (i, p) = (idx / n, idx % n);
        let ctx = NodeContext::from_bundle(bundle, forward, p, i);
        driver.eval(&ctx, fields.y(p, i), fields.z(p, i), fields.zeta(p, i), out);
    });
    g0
}
