//! Forward jump-diffusions on a path bundle, the pathwise Itô decomposition of
//! `e^{beta t} x^2`, and stochastic exponentials.
//!
//! Coefficients are evaluated at the left node of each step, so at a default
//! step the jump coefficient sees the pre-jump state `X_{t-}`.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::PathBundle;
use crate::stats::pairwise_sum;

/// Deterministic function of time.
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `(t, x, out)` coefficient of a state equation; `out` is row-major.
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

pub fn constant_fn(v: f64) -> TimeFn {
    Arc::new(move |_| v)
}

/// `dX = drift dt + sigma dB + kappa dM`, `X_0 = x0`.
#[derive(Clone)]
pub struct ForwardSdeSpec {
    pub x0: Vec<f64>,
    pub d: usize,
    pub k: usize,
    /// Output length `m`.
    pub drift: StateFn,
    /// Output `m x d`.
    pub sigma: StateFn,
    /// Output `m x k`.
    pub kappa: StateFn,
    /// Declared `C1` in `|sigma| + |kappa| <= C1 (1 + |x|)`.
    pub growth_bound: f64,
    /// Declared `C2` in the Lipschitz bound of `sigma` and `kappa`.
    pub lipschitz_bound: f64,
}

impl std::fmt::Debug for ForwardSdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardSdeSpec")
            .field("x0", &self.x0)
            .field("d", &self.d)
            .field("k", &self.k)
            .field("growth_bound", &self.growth_bound)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish_non_exhaustive()
    }
}

impl ForwardSdeSpec {
    pub fn m(&self) -> usize {
        self.x0.len()
    }

    /// Constant coefficients; `sigma` is `m x d`, `kappa` is `m x k`, row-major.
    pub fn constant(x0: Vec<f64>, drift: Vec<f64>, sigma: Vec<f64>, kappa: Vec<f64>, d: usize, k: usize) -> Result<Self> {
        let m = x0.len();
        if drift.len() != m || sigma.len() != m * d || kappa.len() != m * k {
            return Err(Error::InvalidInput("coefficient shapes do not match (m, d, k)".into()));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let growth = norm(&sigma) + norm(&kappa);
        Ok(Self {
            x0,
            d,
            k,
            drift: Arc::new(move |_, _, out| out.copy_from_slice(&drift)),
            sigma: Arc::new(move |_, _, out| out.copy_from_slice(&sigma)),
            kappa: Arc::new(move |_, _, out| out.copy_from_slice(&kappa)),
            growth_bound: growth,
            lipschitz_bound: 0.0,
        })
    }

    /// Scalar `dX = X_- (mu dt + nu dB + kappa dM)` with `d = k = 1`.
    pub fn geometric(x0: f64, mu: f64, nu: f64, kappa: f64) -> Self {
        let c = nu.abs() + kappa.abs();
        Self {
            x0: vec![x0],
            d: 1,
            k: 1,
            drift: Arc::new(move |_, x, out| out[0] = mu * x[0]),
            sigma: Arc::new(move |_, x, out| out[0] = nu * x[0]),
            kappa: Arc::new(move |_, x, out| out[0] = kappa * x[0]),
            growth_bound: c,
            lipschitz_bound: c,
        }
    }

    /// Spot-checks the declared growth and Lipschitz bounds at random `(t, x)`.
    pub fn check_bounds<R: Rng>(&self, horizon: f64, samples: usize, rng: &mut R) -> Result<()> {
        let m = self.m();
        let (mut s1, mut k1, mut s2, mut k2) =
            (vec![0.0; m * self.d], vec![0.0; m * self.k], vec![0.0; m * self.d], vec![0.0; m * self.k]);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..samples {
            let t = rng.random::<f64>() * horizon;
            let x: Vec<f64> = (0..m).map(|_| 10.0 * (rng.random::<f64>() - 0.5)).collect();
            let y: Vec<f64> = (0..m).map(|_| 10.0 * (rng.random::<f64>() - 0.5)).collect();
            (self.sigma)(t, &x, &mut s1);
            (self.kappa)(t, &x, &mut k1);
            (self.sigma)(t, &y, &mut s2);
            (self.kappa)(t, &y, &mut k2);
            let growth = norm(&s1) + norm(&k1);
            if growth > self.growth_bound * (1.0 + norm(&x)) + 1e-9 {
                return Err(Error::Constraint(format!("growth bound {} violated at t={t}, x={x:?}", self.growth_bound)));
            }
            let diff: f64 = norm(&s1.iter().zip(&s2).map(|(a, b)| a - b).collect::<Vec<_>>())
                + norm(&k1.iter().zip(&k2).map(|(a, b)| a - b).collect::<Vec<_>>());
            let dx = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            if diff > self.lipschitz_bound * dx + 1e-9 {
                return Err(Error::Constraint(format!(
                    "Lipschitz bound {} violated between {x:?} and {y:?}",
                    self.lipschitz_bound
                )));
            }
        }
        Ok(())
    }
}

/// State paths `X[p][i]` in `R^m` on the bundle's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPaths {
    n_paths: usize,
    steps: usize,
    m: usize,
    x: Vec<f64>,
}

impl ForwardPaths {
    /// Wraps precomputed states, flat `(p * (N+1) + i) * m + c`.
    pub fn from_values(n_paths: usize, steps: usize, m: usize, x: Vec<f64>) -> Result<Self> {
        if x.len() != n_paths * (steps + 1) * m {
            return Err(Error::Dimension { what: "forward state values", expected: n_paths * (steps + 1) * m, got: x.len() });
        }
        Ok(Self { n_paths, steps, m, x })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn x(&self, p: usize, i: usize) -> &[f64] {
        let off = (p * (self.steps + 1) + i) * self.m;
        &self.x[off..off + self.m]
    }

    pub fn terminal(&self, p: usize) -> &[f64] {
        self.x(p, self.steps)
    }
}

/// Euler scheme `X_{i+1} = X_i + drift dt + sigma dB_i + kappa dM_i`.
pub fn simulate_forward(spec: &ForwardSdeSpec, bundle: &PathBundle) -> Result<ForwardPaths> {
    if spec.d != bundle.d() || spec.k != bundle.k() {
        return Err(Error::InvalidInput(format!(
            "forward spec has (d, k) = ({}, {}) but bundle has ({}, {})",
            spec.d,
            spec.k,
            bundle.d(),
            bundle.k()
        )));
    }
    let m = spec.m();
    let (d, k, steps) = (spec.d, spec.k, bundle.steps());
    let grid = bundle.grid();
    let dt = grid.dt();
    let per_path: Vec<std::result::Result<Vec<f64>, (usize, usize)>> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut xs = Vec::with_capacity((steps + 1) * m);
            xs.extend_from_slice(&spec.x0);
            let (mut drift, mut sig, mut kap) = (vec![0.0; m], vec![0.0; m * d], vec![0.0; m * k]);
            for i in 0..steps {
                let t = grid.t(i);
                let cur = &xs[i * m..(i + 1) * m];
                (spec.drift)(t, cur, &mut drift);
                (spec.sigma)(t, cur, &mut sig);
                (spec.kappa)(t, cur, &mut kap);
                let (db, dm) = (bundle.db(p, i), bundle.dm(p, i));
                let next: Vec<f64> = (0..m)
                    .map(|c| {
                        cur[c]
                            + drift[c] * dt
                            + (0..d).map(|l| sig[c * d + l] * db[l]).sum::<f64>()
                            + (0..k).map(|j| kap[c * k + j] * dm[j]).sum::<f64>()
                    })
                    .collect();
                if next.iter().any(|v| !v.is_finite()) {
                    return Err((p, i + 1));
                }
                xs.extend_from_slice(&next);
            }
            Ok(xs)
        })
        .collect();
    let mut x = Vec::with_capacity(bundle.n_paths() * (steps + 1) * m);
    for r in per_path {
        match r {
            Ok(v) => x.extend_from_slice(&v),
            Err((p, i)) => {
                return Err(Error::Numerical(format!("forward state became non-finite on path {p} at node {i}")))
            }
        }
    }
    ForwardPaths::from_values(bundle.n_paths(), steps, m, x)
}

/// Per-path terms of the discretized Itô formula for `f(t, x) = e^{beta t} x^2`.
///
/// `lhs = f(T, X_T) - f(0, x0)` and the right side is
/// `time + dx + qv + jump`, where
/// `time = sum beta e^{beta t} X^2 dt`, `dx = sum 2 e^{beta t} X dX`,
/// `qv = sum e^{beta t} |sigma|^2 dt` and
/// `jump = sum_j [Delta_j f - f_x kappa_j] dH^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoDecomposition {
    pub lhs: Vec<f64>,
    pub time: Vec<f64>,
    pub dx: Vec<f64>,
    pub qv: Vec<f64>,
    pub jump: Vec<f64>,
    pub residual: Vec<f64>,
}

impl ItoDecomposition {
    pub fn rms(&self) -> f64 {
        (pairwise_sum(&self.residual.iter().map(|r| r * r).collect::<Vec<_>>()) / self.residual.len() as f64).sqrt()
    }
}

pub fn ito_residual(spec: &ForwardSdeSpec, x: &ForwardPaths, bundle: &PathBundle, beta: f64) -> Result<ItoDecomposition> {
    if spec.m() != 1 || x.dim() != 1 {
        return Err(Error::InvalidInput("the Itô check is implemented for scalar states".into()));
    }
    if x.n_paths() != bundle.n_paths() || x.steps() != bundle.steps() {
        return Err(Error::Dimension { what: "forward paths vs bundle", expected: bundle.n_paths(), got: x.n_paths() });
    }
    let (d, k) = (bundle.d(), bundle.k());
    let grid = bundle.grid();
    let dt = grid.dt();
    let f = |t: f64, v: f64| (beta * t).exp() * v * v;
    let rows: Vec<[f64; 6]> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let (mut sig, mut kap) = (vec![0.0; d], vec![0.0; k]);
            let (mut time, mut dx, mut qv, mut jump) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..grid.steps() {
                let t = grid.t(i);
                let xi = x.x(p, i)[0];
                let e = (beta * t).exp();
                (spec.sigma)(t, &[xi], &mut sig);
                (spec.kappa)(t, &[xi], &mut kap);
                time += beta * e * xi * xi * dt;
                dx += 2.0 * e * xi * (x.x(p, i + 1)[0] - xi);
                qv += e * sig.iter().map(|s| s * s).sum::<f64>() * dt;
                for (j, &kj) in kap.iter().enumerate().take(k) {
                    if bundle.h(p, i)[j] == 0 && bundle.h(p, i + 1)[j] == 1 {
                        jump += jump_correction(beta, t, xi, kj);
                    }
                }
            }
            let lhs = f(grid.horizon(), x.terminal(p)[0]) - f(0.0, x.x(p, 0)[0]);
            [lhs, time, dx, qv, jump, lhs - (time + dx + qv + jump)]
        })
        .collect();
    let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    Ok(ItoDecomposition { lhs: col(0), time: col(1), dx: col(2), qv: col(3), jump: col(4), residual: col(5) })
}

/// `Delta_j f - f_x kappa` for `f = e^{beta t} x^2` at a jump of size `kappa` from `x_minus`.
pub fn jump_correction(beta: f64, t: f64, x_minus: f64, kappa: f64) -> f64 {
    let e = (beta * t).exp();
    e * ((x_minus + kappa).powi(2) - x_minus * x_minus) - 2.0 * e * x_minus * kappa
}

/// RMS Itô residual at two resolutions (`N` and `2N`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ItoConvergence {
    pub rms_coarse: f64,
    pub rms_fine: f64,
    /// `rms_fine / rms_coarse`.
    pub ratio: f64,
    /// `log2(rms_coarse / rms_fine)`.
    pub exponent: f64,
}

pub fn ito_convergence(
    spec: &ForwardSdeSpec,
    model: &crate::kernel::DefaultModel,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
    beta: f64,
) -> Result<ItoConvergence> {
    let run = |n: usize| -> Result<f64> {
        let grid = crate::kernel::build_grid(horizon, n)?;
        let bundle = crate::kernel::simulate_bundle(model, &grid, spec.d, n_paths, seed)?;
        let x = simulate_forward(spec, &bundle)?;
        Ok(ito_residual(spec, &x, &bundle, beta)?.rms())
    };
    let rms_coarse = run(steps)?;
    let rms_fine = run(2 * steps)?;
    let ratio = rms_fine / rms_coarse;
    Ok(ItoConvergence { rms_coarse, rms_fine, ratio, exponent: -ratio.log2() })
}

/// Sign convention of a stochastic exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentialForm {
    /// `dQ = -Q_-(a dt + b dB + c dM)`; needs `c < 1`.
    Pricing,
    /// `dQ = Q_-(a dt + b dB + c dM)`; needs `c > -1`.
    Comparison,
}

impl ExponentialForm {
    fn sign(self) -> f64 {
        match self {
            ExponentialForm::Pricing => -1.0,
            ExponentialForm::Comparison => 1.0,
        }
    }
}

/// Coefficients `a(t)`, `b(t)` (one per Brownian component), `c(t)` (one per default).
#[derive(Clone)]
pub struct ExponentialSpec {
    pub a: TimeFn,
    pub b: Vec<TimeFn>,
    pub c: Vec<TimeFn>,
    pub form: ExponentialForm,
}

impl ExponentialSpec {
    pub fn constant(a: f64, b: &[f64], c: &[f64], form: ExponentialForm) -> Self {
        Self {
            a: constant_fn(a),
            b: b.iter().map(|&v| constant_fn(v)).collect(),
            c: c.iter().map(|&v| constant_fn(v)).collect(),
            form,
        }
    }

    /// Checks the jump-factor sign constraint at every node of the grid.
    pub fn validate(&self, bundle: &PathBundle) -> Result<()> {
        if self.b.len() != bundle.d() || self.c.len() != bundle.k() {
            return Err(Error::InvalidInput(format!(
                "exponential has {} Brownian and {} jump coefficients, bundle has d={} k={}",
                self.b.len(),
                self.c.len(),
                bundle.d(),
                bundle.k()
            )));
        }
        for &t in bundle.grid().nodes() {
            for (j, c) in self.c.iter().enumerate() {
                let v = c(t);
                let ok = match self.form {
                    ExponentialForm::Pricing => v < 1.0,
                    ExponentialForm::Comparison => v > -1.0,
                };
                if !ok || !v.is_finite() {
                    return Err(Error::Constraint(format!(
                        "jump coefficient c_{j}({t}) = {v} violates the {:?}-form constraint",
                        self.form
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One step of `log Q` for `dQ = s Q_-(a dt + b dB + c dM)` with exact
/// exponential update; `s = +1` or `-1`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn log_exponential_step(
    sign: f64,
    a: f64,
    b: &[f64],
    c: &[f64],
    db: &[f64],
    h_now: &[u8],
    h_next: &[u8],
    gamma: &[f64],
    dt: f64,
) -> f64 {
    let mut inc = sign * a * dt;
    for (bl, dbl) in b.iter().zip(db) {
        inc += sign * bl * dbl - 0.5 * bl * bl * dt;
    }
    for j in 0..c.len() {
        if h_now[j] == 0 {
            inc -= sign * c[j] * gamma[j] * dt;
            if h_next[j] == 1 {
                inc += (sign * c[j]).ln_1p();
            }
        }
    }
    inc
}

/// `Q[p][i]` with the per-step log increments it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialPaths {
    n_paths: usize,
    steps: usize,
    q: Vec<f64>,
    log_increments: Vec<f64>,
}

impl ExponentialPaths {
    pub fn q(&self, p: usize, i: usize) -> f64 {
        self.q[p * (self.steps + 1) + i]
    }

    pub fn terminal(&self, p: usize) -> f64 {
        self.q(p, self.steps)
    }

    pub fn terminals(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.terminal(p)).collect()
    }

    pub fn log_increment(&self, p: usize, i: usize) -> f64 {
        self.log_increments[p * self.steps + i]
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

pub fn stochastic_exponential(spec: &ExponentialSpec, bundle: &PathBundle) -> Result<ExponentialPaths> {
    spec.validate(bundle)?;
    let grid = bundle.grid();
    let (steps, dt) = (grid.steps(), grid.dt());
    let sign = spec.form.sign();
    // coefficients depend on time only: tabulate once
    let a: Vec<f64> = (0..steps).map(|i| (spec.a)(grid.t(i))).collect();
    let b: Vec<Vec<f64>> = (0..steps).map(|i| spec.b.iter().map(|f| f(grid.t(i))).collect()).collect();
    let c: Vec<Vec<f64>> = (0..steps).map(|i| spec.c.iter().map(|f| f(grid.t(i))).collect()).collect();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut q = Vec::with_capacity(steps + 1);
            let mut incs = Vec::with_capacity(steps);
            let mut log_q = 0.0;
            q.push(1.0);
            for i in 0..steps {
                let inc = log_exponential_step(
                    sign,
                    a[i],
                    &b[i],
                    &c[i],
                    bundle.db(p, i),
                    bundle.h(p, i),
                    bundle.h(p, i + 1),
                    bundle.gamma(i),
                    dt,
                );
                log_q += inc;
                incs.push(inc);
                q.push(log_q.exp());
            }
            (q, incs)
        })
        .collect();
    let mut q = Vec::with_capacity(bundle.n_paths() * (steps + 1));
    let mut log_increments = Vec::with_capacity(bundle.n_paths() * steps);
    for (qs, incs) in rows {
        q.extend(qs);
        log_increments.extend(incs);
    }
    Ok(ExponentialPaths { n_paths: bundle.n_paths(), steps, q, log_increments })
}
