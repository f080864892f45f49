//! Zero-sum stochastic differential game with default risk.
//!
//! The state `X` follows the uncontrolled dynamics of a [`ForwardSdeSpec`];
//! controls act through a change of measure with Brownian drift
//! `sigma^{-1} b(t, X, u, v)` and jump factor `kappa^{-1} c(t, X, u, v)`. The
//! minimizing player picks `u`, the maximizing player `v`, and the cost is
//! `E^{u,v}[int f dt + h(H_T, X_T)]`.

mod girsanov;
mod hamiltonian;
mod robust;
mod solve;

pub use girsanov::{evaluate_cost, girsanov_weights, verify_saddle, weighted_intensity, CostEstimate, Perturbation, SaddleVerification};
pub use hamiltonian::{grid_saddle, hamiltonian, saddle_search, LocalGame, SaddleResult};
pub use robust::{robust_driver, robust_price, RobustPrice, ThetaPoint, ThetaSet};
pub use solve::{solve_game_bsde, GameMode, GameSolution, ISAACS_TOLERANCE};

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::TerminalSpec;
use crate::error::{Error, Result};
use crate::jump_ito::{ForwardPaths, ForwardSdeSpec};
use crate::kernel::PathBundle;

/// `(t, x, u, v, out)`.
pub type ControlledFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, u, v) -> f`.
pub type CostFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Finite set of control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
}

impl ControlGrid {
    /// `n` equally spaced points on `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64, n: usize) -> Self {
        let points = if n <= 1 {
            vec![vec![lo]]
        } else {
            (0..n).map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64]).collect()
        };
        Self { dim: 1, points }
    }

    pub fn singleton(point: Vec<f64>) -> Self {
        Self { dim: point.len(), points: vec![point] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidInput(format!("control grid {name} is empty")));
        }
        if self.points.iter().any(|p| p.len() != self.dim || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput(format!("control grid {name} has malformed points")));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct GameSpec {
    /// Uncontrolled state dynamics; `sigma` must be `d x d` and `kappa` `k x k`.
    pub forward: ForwardSdeSpec,
    /// `b(t, x, u, v)` in `R^d`.
    pub drift: ControlledFn,
    /// `c(t, x, u, v)` in `R^k`.
    pub jump: ControlledFn,
    /// `f(t, x, u, v) >= 0`.
    pub running_cost: CostFn,
    /// `h(H_T, X_T) >= 0`.
    pub terminal_cost: TerminalSpec,
    pub u_grid: ControlGrid,
    pub v_grid: ControlGrid,
    /// Declared bounds on `|sigma^{-1}|` and `|kappa^{-1}|`.
    pub sigma_inv_bound: f64,
    pub kappa_inv_bound: f64,
    /// Declared Lipschitz constant of the Hamiltonian in `(z, zeta)`.
    pub lipschitz: f64,
}

impl std::fmt::Debug for GameSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameSpec")
            .field("forward", &self.forward)
            .field("terminal_cost", &self.terminal_cost)
            .field("u_grid", &self.u_grid.len())
            .field("v_grid", &self.v_grid.len())
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

/// Margin kept between the jump factor `kappa^{-1} c` and `-1`.
pub const JUMP_FACTOR_MARGIN: f64 = 1e-9;

impl GameSpec {
    pub fn d(&self) -> usize {
        self.forward.d
    }

    pub fn k(&self) -> usize {
        self.forward.k
    }

    fn check_shapes(&self, bundle: &PathBundle, forward: &ForwardPaths) -> Result<()> {
        let m = self.forward.m();
        if m != self.d() || m != self.k() {
            return Err(Error::InvalidInput(format!(
                "game needs square sigma and kappa: m={m}, d={}, k={}",
                self.d(),
                self.k()
            )));
        }
        if bundle.d() != self.d() || bundle.k() != self.k() {
            return Err(Error::InvalidInput("bundle dimensions differ from the game".into()));
        }
        if forward.n_paths() != bundle.n_paths() || forward.steps() != bundle.steps() || forward.dim() != m {
            return Err(Error::Dimension { what: "forward paths vs bundle", expected: bundle.n_paths(), got: forward.n_paths() });
        }
        if self.terminal_cost.m != 1 {
            return Err(Error::InvalidInput("terminal cost must be scalar".into()));
        }
        self.u_grid.validate("U")?;
        self.v_grid.validate("V")
    }

    /// Spot-checks invertibility bounds, the jump-factor constraint and the
    /// sign of the costs on `samples` random `(path, node, u, v)` draws.
    pub fn validate<R: Rng>(&self, bundle: &PathBundle, forward: &ForwardPaths, samples: usize, rng: &mut R) -> Result<()> {
        self.check_shapes(bundle, forward)?;
        let steps = bundle.steps();
        for _ in 0..samples {
            let p = rng.random_range(0..bundle.n_paths());
            let i = rng.random_range(0..=steps);
            let t = bundle.grid().t(i);
            let x = forward.x(p, i);
            let local = LocalGame::new(self, t, x)?;
            if local.sigma_inv_norm() > self.sigma_inv_bound + 1e-9 || local.kappa_inv_norm() > self.kappa_inv_bound + 1e-9 {
                return Err(Error::Constraint(format!("inverse bound exceeded at t={t}, x={x:?}")));
            }
            let u = &self.u_grid.points[rng.random_range(0..self.u_grid.len())];
            let v = &self.v_grid.points[rng.random_range(0..self.v_grid.len())];
            let factor = local.jump_factor(u, v);
            if let Some(j) = factor.iter().position(|&q| !(q > -1.0 + JUMP_FACTOR_MARGIN)) {
                return Err(Error::Constraint(format!(
                    "jump factor component {j} = {} not above -1 at t={t}, x={x:?}, u={u:?}, v={v:?}",
                    factor[j]
                )));
            }
            let f = (self.running_cost)(t, x, u, v);
            if !(f >= 0.0) {
                return Err(Error::Constraint(format!("running cost {f} negative at t={t}, x={x:?}")));
            }
        }
        let h = self.terminal_cost.evaluate(bundle, Some(forward))?;
        if let Some(p) = h.iter().position(|&v| v < 0.0) {
            return Err(Error::Constraint(format!("terminal cost {} negative on path {p}", h[p])));
        }
        Ok(())
    }
}

/// Control values along paths: constant, or one value per `(node, path)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Constant(Vec<f64>),
    Feedback { dim: usize, n_paths: usize, values: Vec<f64> },
}

impl Strategy {
    #[inline]
    pub fn at(&self, p: usize, i: usize) -> &[f64] {
        match self {
            Strategy::Constant(v) => v,
            Strategy::Feedback { dim, n_paths, values } => {
                let o = (i * n_paths + p) * dim;
                &values[o..o + dim]
            }
        }
    }
}

/// One-name game with `X = x0 + B + M`, `b = u`, `c = v / 2`,
/// `f = u^2 + 1 - v^2` and `h = 1 + tanh(X_T) / 2 + H_T / 2` on
/// `U = V = [-1, 1]` with `points` grid points each. Its Hamiltonian is
/// separable in `(u, v)`, so the Isaacs condition holds on the grid.
pub fn separable_game(x0: f64, points: usize) -> GameSpec {
    let forward = ForwardSdeSpec::constant(vec![x0], vec![0.0], vec![1.0], vec![1.0], 1, 1).expect("valid constant dynamics");
    GameSpec {
        forward,
        drift: Arc::new(|_t, _x, u, _v, out| out[0] = u[0]),
        jump: Arc::new(|_t, _x, _u, v, out| out[0] = 0.5 * v[0]),
        running_cost: Arc::new(|_t, _x, u, v| u[0] * u[0] + (1.0 - v[0] * v[0])),
        terminal_cost: TerminalSpec::scalar(2.0, |h, x| 1.0 + 0.5 * x.map_or(0.0, |x| x[0].tanh()) + 0.5 * h[0] as f64)
            .with_label("1 + tanh(X_T)/2 + H_T/2"),
        u_grid: ControlGrid::interval(-1.0, 1.0, points),
        v_grid: ControlGrid::interval(-1.0, 1.0, points),
        sigma_inv_bound: 1.0,
        kappa_inv_bound: 1.0,
        lipschitz: 1.0,
    }
}

#[cfg(test)]
mod tests;
