use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::GameSpec;
use crate::error::{Error, Result};

/// Game coefficients frozen at one `(t, x)`.
pub struct LocalGame<'a> {
    spec: &'a GameSpec,
    pub t: f64,
    x: &'a [f64],
    sigma_inv: DMatrix<f64>,
    kappa_inv: DMatrix<f64>,
}

fn invert(values: Vec<f64>, n: usize, what: &str, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    DMatrix::from_row_slice(n, n, &values)
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Constraint(format!("{what} is singular at t={t}, x={x:?}")))
}

/// Scratch space for repeated Hamiltonian evaluations.
pub(crate) struct Scratch {
    raw_b: Vec<f64>,
    raw_c: Vec<f64>,
    pub(crate) drift: Vec<f64>,
    pub(crate) jump: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(d: usize, k: usize) -> Self {
        Self { raw_b: vec![0.0; d], raw_c: vec![0.0; k], drift: vec![0.0; d], jump: vec![0.0; k] }
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, vc) in v.iter().enumerate() {
            acc += m[(r, c)] * vc;
        }
        *o = acc;
    }
}

impl<'a> LocalGame<'a> {
    pub fn new(spec: &'a GameSpec, t: f64, x: &'a [f64]) -> Result<Self> {
        let (d, k) = (spec.d(), spec.k());
        let mut sig = vec![0.0; d * d];
        let mut kap = vec![0.0; k * k];
        (spec.forward.sigma)(t, x, &mut sig);
        (spec.forward.kappa)(t, x, &mut kap);
        Ok(Self { spec, t, x, sigma_inv: invert(sig, d, "sigma", t, x)?, kappa_inv: invert(kap, k, "kappa", t, x)? })
    }

    pub fn sigma_inv_norm(&self) -> f64 {
        self.sigma_inv.norm()
    }

    pub fn kappa_inv_norm(&self) -> f64 {
        self.kappa_inv.norm()
    }

    /// Fills `scratch.drift = sigma^{-1} b` and `scratch.jump = kappa^{-1} c`.
    pub(crate) fn factors(&self, u: &[f64], v: &[f64], scratch: &mut Scratch) {
        (self.spec.drift)(self.t, self.x, u, v, &mut scratch.raw_b);
        (self.spec.jump)(self.t, self.x, u, v, &mut scratch.raw_c);
        mat_vec(&self.sigma_inv, &scratch.raw_b, &mut scratch.drift);
        mat_vec(&self.kappa_inv, &scratch.raw_c, &mut scratch.jump);
    }

    /// `sigma^{-1} b(t, x, u, v)`.
    pub fn brownian_drift(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut s = Scratch::new(self.spec.d(), self.spec.k());
        self.factors(u, v, &mut s);
        s.drift
    }

    /// `kappa^{-1} c(t, x, u, v)`.
    pub fn jump_factor(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut s = Scratch::new(self.spec.d(), self.spec.k());
        self.factors(u, v, &mut s);
        s.jump
    }

    pub fn running_cost(&self, u: &[f64], v: &[f64]) -> f64 {
        (self.spec.running_cost)(self.t, self.x, u, v)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn hamiltonian_with(&self, z: &[f64], zeta: &[f64], h: &[u8], gamma: &[f64], u: &[f64], v: &[f64], s: &mut Scratch) -> f64 {
        self.factors(u, v, s);
        let mut value = self.running_cost(u, v);
        for (zl, bl) in z.iter().zip(&s.drift) {
            value += zl * bl;
        }
        for j in 0..s.jump.len() {
            if h[j] == 0 {
                value += zeta[j] * s.jump[j] * gamma[j];
            }
        }
        value
    }

    /// `z . sigma^{-1} b + sum_j zeta_j (kappa^{-1} c)_j 1{pre} gamma_j + f`.
    pub fn hamiltonian(&self, z: &[f64], zeta: &[f64], h: &[u8], gamma: &[f64], u: &[f64], v: &[f64]) -> f64 {
        let mut s = Scratch::new(self.spec.d(), self.spec.k());
        self.hamiltonian_with(z, zeta, h, gamma, u, v, &mut s)
    }

    /// Hamiltonian over the full `U x V` grid, row-major by `u`.
    pub fn matrix(&self, z: &[f64], zeta: &[f64], h: &[u8], gamma: &[f64]) -> Vec<f64> {
        let mut s = Scratch::new(self.spec.d(), self.spec.k());
        let mut out = Vec::with_capacity(self.spec.u_grid.len() * self.spec.v_grid.len());
        for u in &self.spec.u_grid.points {
            for v in &self.spec.v_grid.points {
                out.push(self.hamiltonian_with(z, zeta, h, gamma, u, v, &mut s));
            }
        }
        out
    }
}

/// Hamiltonian at one point; `h` and `gamma` are the node's default
/// indicators and intensities.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(spec: &GameSpec, t: f64, x: &[f64], z: &[f64], zeta: &[f64], h: &[u8], gamma: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(LocalGame::new(spec, t, x)?.hamiltonian(z, zeta, h, gamma, u, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleResult {
    pub u_index: usize,
    pub v_index: usize,
    pub u_star: Vec<f64>,
    pub v_star: Vec<f64>,
    /// `H(u*, v*)`.
    pub value: f64,
    /// `min_u max_v H`.
    pub upper: f64,
    /// `max_v min_u H`.
    pub lower: f64,
    /// `upper - lower >= 0`.
    pub isaacs_gap: f64,
}

/// Grid saddle of a `rows x cols` matrix (rows minimize, columns maximize),
/// ties broken towards the lowest index. Control vectors are left empty.
pub fn grid_saddle(values: &[f64], rows: usize, cols: usize) -> SaddleResult {
    assert_eq!(values.len(), rows * cols);
    assert!(rows > 0 && cols > 0);
    let (mut u_index, mut upper) = (0, f64::INFINITY);
    for a in 0..rows {
        let row_max = values[a * cols..(a + 1) * cols].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if row_max < upper {
            upper = row_max;
            u_index = a;
        }
    }
    let (mut v_index, mut lower) = (0, f64::NEG_INFINITY);
    for b in 0..cols {
        let col_min = (0..rows).map(|a| values[a * cols + b]).fold(f64::INFINITY, f64::min);
        if col_min > lower {
            lower = col_min;
            v_index = b;
        }
    }
    SaddleResult {
        u_index,
        v_index,
        u_star: vec![],
        v_star: vec![],
        value: values[u_index * cols + v_index],
        upper,
        lower,
        isaacs_gap: (upper - lower).max(0.0),
    }
}

/// Grid saddle of the Hamiltonian at one `(t, x, z, zeta)`.
#[allow(clippy::too_many_arguments)]
pub fn saddle_search(spec: &GameSpec, t: f64, x: &[f64], z: &[f64], zeta: &[f64], h: &[u8], gamma: &[f64]) -> Result<SaddleResult> {
    let local = LocalGame::new(spec, t, x)?;
    Ok(local_saddle(spec, &local, z, zeta, h, gamma))
}

pub(crate) fn local_saddle(spec: &GameSpec, local: &LocalGame, z: &[f64], zeta: &[f64], h: &[u8], gamma: &[f64]) -> SaddleResult {
    let values = local.matrix(z, zeta, h, gamma);
    let mut res = grid_saddle(&values, spec.u_grid.len(), spec.v_grid.len());
    res.u_star = spec.u_grid.points[res.u_index].clone();
    res.v_star = spec.v_grid.points[res.v_index].clone();
    res
}
