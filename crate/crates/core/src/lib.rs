//! Backward stochastic differential equations driven by a Brownian motion and
//! the compensated martingales of random default times.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`] builds time grids, simulates default times from deterministic
//!   intensities and produces joint `(B, H, M)` path bundles.
//! * [`jump_ito`] runs forward jump-diffusions on a bundle, checks the Itô
//!   decomposition pathwise and builds stochastic exponentials.
//! * [`regression`] realises conditional expectations by bucketed least squares.
//! * [`engine`] is the backward solver with Picard diagnostics and norms.
//! * [`linear`] prices linear BSDEs through the adjoint process and recovers
//!   replication strategies.
//! * [`comparison`] checks the comparison theorem and its counterexample.
//! * [`game`] covers the zero-sum game: Hamiltonian, saddle search, game BSDEs,
//!   Girsanov weights and robust prices.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod comparison;
pub mod engine;
pub mod error;
pub mod game;
pub mod jump_ito;
pub mod kernel;
pub mod linear;
pub mod regression;
pub mod stats;

pub use error::{Error, Result};
