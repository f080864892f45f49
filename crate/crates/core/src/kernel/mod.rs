//! Time grids, default-time simulation and joint `(B, H, M)` path bundles.

mod bundle;
mod grid;
mod martingale;
mod model;
pub mod rng;

pub use bundle::{simulate_bundle, simulate_defaults, DefaultPaths, PathBundle, BUNDLE_MAGIC};
pub use grid::{build_grid, TimeGrid};
pub use martingale::{martingale_check, survival_estimate, ComponentStat, MartingaleReport};
pub use model::{DefaultModel, Intensity};
