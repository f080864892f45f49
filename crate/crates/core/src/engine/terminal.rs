//! Terminal conditions `xi = phi(H_T, X_T)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::PathBundle;

/// `(H_T, X_T, out[m])`.
pub type PayoffFn = Arc<dyn Fn(&[u8], Option<&[f64]>, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct TerminalSpec {
    pub m: usize,
    pub payoff: PayoffFn,
    /// Declared bound on `|phi|`.
    pub bound: f64,
    pub label: String,
}

impl std::fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TerminalSpec")
            .field("label", &self.label)
            .field("m", &self.m)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl TerminalSpec {
    pub fn new(m: usize, bound: f64, payoff: PayoffFn) -> Self {
        Self { m, payoff, bound, label: "custom".into() }
    }

    pub fn scalar<F>(bound: f64, f: F) -> Self
    where
        F: Fn(&[u8], Option<&[f64]>) -> f64 + Send + Sync + 'static,
    {
        Self::new(1, bound, Arc::new(move |h, x, out| out[0] = f(h, x)))
    }

    pub fn constant(value: f64) -> Self {
        Self::scalar(value.abs(), move |_, _| value).with_label(format!("constant {value}"))
    }

    /// `1{tau_j > T}`.
    pub fn survival(j: usize) -> Self {
        Self::scalar(1.0, move |h, _| 1.0 - h[j] as f64).with_label(format!("survival of name {j}"))
    }

    /// `H^j_T`.
    pub fn default_indicator(j: usize) -> Self {
        Self::scalar(1.0, move |h, _| h[j] as f64).with_label(format!("default indicator of name {j}"))
    }

    /// `xi0 1{tau_j > T} + xi1 1{tau_j <= T}`.
    pub fn recovery(j: usize, survive: f64, default: f64) -> Self {
        Self::scalar(survive.abs().max(default.abs()), move |h, _| if h[j] == 0 { survive } else { default })
            .with_label(format!("claim ({survive}, {default}) on name {j}"))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Payoff per path, flat `p * m + c`; fails if the declared bound is exceeded.
    pub fn evaluate(&self, bundle: &PathBundle, forward: Option<&ForwardPaths>) -> Result<Vec<f64>> {
        let n = bundle.n_paths();
        let steps = bundle.steps();
        let mut out = vec![0.0; n * self.m];
        for (p, chunk) in out.chunks_mut(self.m).enumerate() {
            (self.payoff)(bundle.h(p, steps), forward.map(|f| f.x(p, steps)), chunk);
            for &v in chunk.iter() {
                if !v.is_finite() || v.abs() > self.bound * (1.0 + 1e-12) {
                    return Err(Error::Constraint(format!(
                        "terminal payoff {v} on path {p} exceeds declared bound {}",
                        self.bound
                    )));
                }
            }
        }
        Ok(out)
    }
}
