//! Backward solver for BSDEs driven by a Brownian motion and compensated
//! default martingales, with Picard and energy-estimate diagnostics.

mod driver;
mod picard;
mod solution;
mod solver;
mod terminal;

pub use driver::{check_driver, DriverCheck, DriverSpec, GeneratorFn, NodeContext};
pub use picard::{apriori_estimate, beta_norm, picard_diagnostics, AprioriReport, PicardReport};
pub use solution::{format_float, BsdeSolution, NodeFields, SchemeMeta};
pub use solver::{extract_martingale_coeffs, freeze_driver, solve, solve_frozen, SolverConfig};
pub use terminal::{PayoffFn, TerminalSpec};

#[cfg(test)]
mod tests;
