use serde::{Deserialize, Serialize};

use super::TimeGrid;
use crate::error::{invalid, Result};

/// Deterministic default intensity `gamma(t)`.
///
/// Only functions of time are supported; cumulative hazards are integrated in
/// closed form so the simulated survival law is exact at grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intensity {
    Constant { value: f64 },
    /// `values[0]` on `[0, breaks[0])`, `values[1]` on `[breaks[0], breaks[1])`, ...
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
    /// `start + slope * t`
    Linear { start: f64, slope: f64 },
}

impl Intensity {
    pub fn constant(value: f64) -> Self {
        Intensity::Constant { value }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self {
            Intensity::Constant { value } => *value,
            Intensity::Piecewise { breaks, values } => {
                let idx = breaks.iter().take_while(|&&b| t >= b).count();
                values[idx]
            }
            Intensity::Linear { start, slope } => start + slope * t,
        }
    }

    /// `Gamma(t) = int_0^t gamma(s) ds`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Intensity::Constant { value } => value * t,
            Intensity::Piecewise { breaks, values } => {
                let mut acc = 0.0;
                let mut left = 0.0;
                for (b, v) in breaks.iter().zip(values) {
                    if t <= *b {
                        return acc + v * (t - left);
                    }
                    acc += v * (b - left);
                    left = *b;
                }
                acc + values[values.len() - 1] * (t - left)
            }
            Intensity::Linear { start, slope } => start * t + 0.5 * slope * t * t,
        }
    }

    fn validate_shape(&self) -> Result<()> {
        match self {
            Intensity::Constant { value } if !value.is_finite() => {
                invalid("constant intensity must be finite")
            }
            Intensity::Piecewise { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return invalid(format!(
                        "piecewise intensity needs {} values for {} breaks, got {}",
                        breaks.len() + 1,
                        breaks.len(),
                        values.len()
                    ));
                }
                if breaks.windows(2).any(|w| w[1] <= w[0]) || breaks.iter().any(|b| *b <= 0.0) {
                    return invalid("piecewise intensity breaks must be positive and increasing");
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return invalid("piecewise intensity values must be finite");
                }
                Ok(())
            }
            Intensity::Linear { start, slope } if !(start.is_finite() && slope.is_finite()) => {
                invalid("linear intensity coefficients must be finite")
            }
            _ => Ok(()),
        }
    }
}

/// `k` independent default times with deterministic bounded intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultModel {
    pub intensities: Vec<Intensity>,
    pub gamma_max: f64,
}

impl DefaultModel {
    pub fn new(intensities: Vec<Intensity>, gamma_max: f64) -> Self {
        Self { intensities, gamma_max }
    }

    /// `k` copies of the same constant intensity, bound set to that value.
    pub fn constant(k: usize, gamma: f64) -> Self {
        Self::new(vec![Intensity::constant(gamma); k], gamma)
    }

    pub fn k(&self) -> usize {
        self.intensities.len()
    }

    /// Checks `0 <= gamma_j(t_i) <= gamma_max` at every node.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.gamma_max.is_finite() && self.gamma_max >= 0.0) {
            return invalid(format!("gamma_max must be finite and nonnegative, got {}", self.gamma_max));
        }
        for (j, inten) in self.intensities.iter().enumerate() {
            inten.validate_shape()?;
            for &t in grid.nodes() {
                let g = inten.rate(t);
                if !(g >= 0.0) {
                    return invalid(format!("intensity {j} is negative ({g}) at t={t}"));
                }
                if g > self.gamma_max * (1.0 + 1e-12) {
                    return invalid(format!(
                        "intensity {j} exceeds gamma_max {} at t={t} ({g})",
                        self.gamma_max
                    ));
                }
            }
        }
        Ok(())
    }

    /// Node intensities, row-major `[i * k + j]`, `i = 0..=N`.
    pub fn rates_on_grid(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.nodes()
            .iter()
            .flat_map(|&t| self.intensities.iter().map(move |g| g.rate(t)))
            .collect()
    }

    /// Cumulative hazards at nodes, row-major `[i * k + j]`.
    pub fn cumulative_on_grid(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.nodes()
            .iter()
            .flat_map(|&t| self.intensities.iter().map(move |g| g.cumulative(t)))
            .collect()
    }
}
