use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::hamiltonian::{local_saddle, LocalGame, Scratch};
use super::{GameSpec, Strategy};
use crate::engine::{solve, BsdeSolution, DriverSpec, NodeContext, SolverConfig};
use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::PathBundle;
use crate::regression::RegressionBasis;
use crate::stats::MeanEstimate;

/// Relative Isaacs gap above which saddle mode refuses to run.
pub const ISAACS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum GameMode {
    /// Both controls fixed to constants.
    Fixed { u: Vec<f64>, v: Vec<f64> },
    /// Grid saddle of the Hamiltonian at every node.
    Saddle,
    /// `u` fixed; the maximizer responds.
    BestResponseToU { u: Vec<f64> },
    /// `v` fixed; the minimizer responds.
    BestResponseToV { v: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct GameSolution {
    pub mode: GameMode,
    pub solution: BsdeSolution,
    /// `J` at time zero from the BSDE.
    pub value: MeanEstimate,
    /// Controls used at each `(node, path)`.
    pub u_strategy: Strategy,
    pub v_strategy: Strategy,
    /// Largest grid Isaacs gap met (saddle mode only, otherwise zero).
    pub max_isaacs_gap: f64,
}

struct Recorder {
    n_paths: usize,
    u_index: Vec<AtomicU32>,
    v_index: Vec<AtomicU32>,
    max_gap: AtomicU64,
    failure: Mutex<Option<String>>,
}

impl Recorder {
    fn new(n_paths: usize, steps: usize) -> Self {
        let len = n_paths * steps;
        Self {
            n_paths,
            u_index: (0..len).map(|_| AtomicU32::new(0)).collect(),
            v_index: (0..len).map(|_| AtomicU32::new(0)).collect(),
            max_gap: AtomicU64::new(0f64.to_bits()),
            failure: Mutex::new(None),
        }
    }

    fn record(&self, ctx: &NodeContext, u: usize, v: usize) {
        let o = ctx.node * self.n_paths + ctx.path;
        self.u_index[o].store(u as u32, Ordering::Relaxed);
        self.v_index[o].store(v as u32, Ordering::Relaxed);
    }

    fn fail(&self, msg: String) {
        let mut slot = self.failure.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_none() {
            *slot = Some(msg);
        }
    }

    fn strategy(&self, indices: &[AtomicU32], grid: &super::ControlGrid) -> Strategy {
        let mut values = Vec::with_capacity(indices.len() * grid.dim);
        for a in indices {
            values.extend_from_slice(&grid.points[a.load(Ordering::Relaxed) as usize]);
        }
        Strategy::Feedback { dim: grid.dim, n_paths: self.n_paths, values }
    }
}

fn check_control(point: &[f64], grid: &super::ControlGrid, name: &str) -> Result<()> {
    if point.len() != grid.dim || point.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("control {name} = {point:?} does not match dimension {}", grid.dim)));
    }
    Ok(())
}

/// Solves `-dY = H(t, X, Z, zeta, u, v) dt - Z dB - zeta dM`, `Y_T = h`, with
/// the controls chosen according to `mode`.
pub fn solve_game_bsde(
    spec: &GameSpec,
    bundle: &PathBundle,
    forward: &ForwardPaths,
    basis: &RegressionBasis,
    mode: &GameMode,
) -> Result<GameSolution> {
    spec.check_shapes(bundle, forward)?;
    match mode {
        GameMode::Fixed { u, v } => {
            check_control(u, &spec.u_grid, "u")?;
            check_control(v, &spec.v_grid, "v")?;
        }
        GameMode::BestResponseToU { u } => check_control(u, &spec.u_grid, "u")?,
        GameMode::BestResponseToV { v } => check_control(v, &spec.v_grid, "v")?,
        GameMode::Saddle => {}
    }
    let recorder = Arc::new(Recorder::new(bundle.n_paths(), bundle.steps()));
    let game = Arc::new(spec.clone());
    let rec = recorder.clone();
    let mode_c = mode.clone();
    let (d, k) = (spec.d(), spec.k());
    let g = Arc::new(move |ctx: &NodeContext, _y: &[f64], z: &[f64], zeta: &[f64], out: &mut [f64]| {
        let x = ctx.x.expect("game driver needs forward paths");
        let local = match LocalGame::new(&game, ctx.t, x) {
            Ok(l) => l,
            Err(e) => {
                rec.fail(e.to_string());
                out[0] = f64::NAN;
                return;
            }
        };
        let mut s = Scratch::new(d, k);
        out[0] = match &mode_c {
            GameMode::Fixed { u, v } => local.hamiltonian_with(z, zeta, ctx.h, ctx.gamma, u, v, &mut s),
            GameMode::Saddle => {
                let res = local_saddle(&game, &local, z, zeta, ctx.h, ctx.gamma);
                let mut cur = rec.max_gap.load(Ordering::Relaxed);
                while f64::from_bits(cur) < res.isaacs_gap {
                    match rec.max_gap.compare_exchange_weak(cur, res.isaacs_gap.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
                        Ok(_) => break,
                        Err(now) => cur = now,
                    }
                }
                if res.isaacs_gap > ISAACS_TOLERANCE * (1.0 + res.value.abs()) {
                    rec.fail(format!(
                        "Isaacs condition fails: gap {:.3e} (min-max {}, max-min {}) at path {}, node {}, t={}, x={x:?}, z={z:?}, zeta={zeta:?}",
                        res.isaacs_gap, res.upper, res.lower, ctx.path, ctx.node, ctx.t
                    ));
                    f64::NAN
                } else {
                    rec.record(ctx, res.u_index, res.v_index);
                    res.value
                }
            }
            GameMode::BestResponseToU { u } => {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for (b, v) in game.v_grid.points.iter().enumerate() {
                    let hv = local.hamiltonian_with(z, zeta, ctx.h, ctx.gamma, u, v, &mut s);
                    if hv > best {
                        best = hv;
                        arg = b;
                    }
                }
                rec.record(ctx, 0, arg);
                best
            }
            GameMode::BestResponseToV { v } => {
                let (mut best, mut arg) = (f64::INFINITY, 0);
                for (a, u) in game.u_grid.points.iter().enumerate() {
                    let hv = local.hamiltonian_with(z, zeta, ctx.h, ctx.gamma, u, v, &mut s);
                    if hv < best {
                        best = hv;
                        arg = a;
                    }
                }
                rec.record(ctx, arg, 0);
                best
            }
        };
    });
    let driver = DriverSpec::new(1, spec.lipschitz, g)
        .independent_of_y()
        .with_flags(true, true, true)
        .with_label("game hamiltonian");
    let config = SolverConfig::default();
    let result = solve(&driver, &spec.terminal_cost, bundle, Some(forward), basis, &config);
    if let Some(msg) = recorder.failure.lock().unwrap_or_else(|e| e.into_inner()).take() {
        return Err(Error::Constraint(msg));
    }
    let solution = result?;
    let (u_strategy, v_strategy) = match mode {
        GameMode::Fixed { u, v } => (Strategy::Constant(u.clone()), Strategy::Constant(v.clone())),
        GameMode::Saddle => (recorder.strategy(&recorder.u_index, &spec.u_grid), recorder.strategy(&recorder.v_index, &spec.v_grid)),
        GameMode::BestResponseToU { u } => (Strategy::Constant(u.clone()), recorder.strategy(&recorder.v_index, &spec.v_grid)),
        GameMode::BestResponseToV { v } => (recorder.strategy(&recorder.u_index, &spec.u_grid), Strategy::Constant(v.clone())),
    };
    let value = MeanEstimate { mean: solution.y0(), se: solution.y0_se(), n: solution.n_paths() };
    let max_isaacs_gap = f64::from_bits(recorder.max_gap.load(Ordering::Relaxed));
    Ok(GameSolution { mode: mode.clone(), solution, value, u_strategy, v_strategy, max_isaacs_gap })
}
