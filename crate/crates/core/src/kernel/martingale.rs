use serde::{Deserialize, Serialize};

use super::PathBundle;
use crate::stats::MeanEstimate;

/// Flag threshold on `|z|` for terminal martingale means.
pub const Z_FLAG: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStat {
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    pub flagged: bool,
}

impl ComponentStat {
    fn from_samples(xs: &[f64]) -> Self {
        let est = MeanEstimate::from_samples(xs);
        let z = est.z_score(0.0);
        Self { mean: est.mean, se: est.se, z, flagged: z.abs() > Z_FLAG }
    }
}

/// Terminal-mean diagnostics for `M_T` (one entry per default) and `B_T`
/// (one entry per Brownian component).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub m_terminal: Vec<ComponentStat>,
    pub b_terminal: Vec<ComponentStat>,
}

impl MartingaleReport {
    pub fn any_flagged(&self) -> bool {
        self.m_terminal.iter().chain(&self.b_terminal).any(|c| c.flagged)
    }
}

pub fn martingale_check(bundle: &PathBundle) -> MartingaleReport {
    let n = bundle.n_paths();
    let steps = bundle.steps();
    let m_terminal = (0..bundle.k())
        .map(|j| {
            let xs: Vec<f64> = (0..n).map(|p| bundle.martingale_at(p, steps, j)).collect();
            ComponentStat::from_samples(&xs)
        })
        .collect();
    let b_terminal = (0..bundle.d())
        .map(|l| {
            let xs: Vec<f64> = (0..n).map(|p| bundle.brownian_at(p, steps, l)).collect();
            ComponentStat::from_samples(&xs)
        })
        .collect();
    MartingaleReport { m_terminal, b_terminal }
}

/// Empirical `P(tau_j > t_i)`.
pub fn survival_estimate(bundle: &PathBundle, j: usize, i: usize) -> MeanEstimate {
    let xs: Vec<f64> = (0..bundle.n_paths())
        .map(|p| if bundle.alive(p, i, j) { 1.0 } else { 0.0 })
        .collect();
    MeanEstimate::from_samples(&xs)
}
