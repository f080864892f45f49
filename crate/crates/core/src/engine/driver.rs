//! Generators `g(t, y, z, zeta)` and their declared regularity.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::PathBundle;

/// What a generator may look at besides `(y, z, zeta)`.
#[derive(Debug, Clone, Copy)]
pub struct NodeContext<'a> {
    pub t: f64,
    pub node: usize,
    pub path: usize,
    pub dt: f64,
    /// Default indicators `H_{t_i}`.
    pub h: &'a [u8],
    /// Intensities `gamma(t_i)`.
    pub gamma: &'a [f64],
    /// Forward state at the node, when one is attached.
    pub x: Option<&'a [f64]>,
}

impl<'a> NodeContext<'a> {
    #[inline]
    pub fn pre_default(&self, j: usize) -> bool {
        self.h[j] == 0
    }

    /// `1{tau_j > t} gamma_j(t)`.
    #[inline]
    pub fn active_intensity(&self, j: usize) -> f64 {
        if self.h[j] == 0 {
            self.gamma[j]
        } else {
            0.0
        }
    }

    pub fn from_bundle(bundle: &'a PathBundle, forward: Option<&'a ForwardPaths>, path: usize, node: usize) -> Self {
        Self {
            t: bundle.grid().t(node),
            node,
            path,
            dt: bundle.dt(),
            h: bundle.h(path, node),
            gamma: bundle.gamma(node),
            x: forward.map(|f| f.x(path, node)),
        }
    }
}

/// `(ctx, y[m], z[m*d], zeta[m*k], out[m])`; matrices are row-major by component of `y`.
pub type GeneratorFn = Arc<dyn Fn(&NodeContext, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct DriverSpec {
    pub m: usize,
    pub g: GeneratorFn,
    /// Declared Lipschitz constant `C`.
    pub lipschitz: f64,
    pub satisfies_a: bool,
    pub satisfies_b: bool,
    pub satisfies_c: bool,
    /// `false` lets the solver skip the implicit fixed point.
    pub depends_on_y: bool,
    pub label: String,
}

impl std::fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriverSpec")
            .field("label", &self.label)
            .field("m", &self.m)
            .field("lipschitz", &self.lipschitz)
            .field("satisfies_a", &self.satisfies_a)
            .field("satisfies_b", &self.satisfies_b)
            .field("satisfies_c", &self.satisfies_c)
            .finish_non_exhaustive()
    }
}

impl DriverSpec {
    pub fn new(m: usize, lipschitz: f64, g: GeneratorFn) -> Self {
        Self {
            m,
            g,
            lipschitz,
            satisfies_a: true,
            satisfies_b: true,
            satisfies_c: true,
            depends_on_y: true,
            label: String::from("custom"),
        }
    }

    /// Scalar generator `(ctx, y, z[d], zeta[k]) -> g`.
    pub fn scalar<F>(lipschitz: f64, f: F) -> Self
    where
        F: Fn(&NodeContext, f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(1, lipschitz, Arc::new(move |ctx, y, z, zeta, out| out[0] = f(ctx, y[0], z, zeta)))
    }

    pub fn zero(m: usize) -> Self {
        let mut d = Self::new(m, 0.0, Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)));
        d.depends_on_y = false;
        d.label = "zero".into();
        d
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn independent_of_y(mut self) -> Self {
        self.depends_on_y = false;
        self
    }

    pub fn with_flags(mut self, a: bool, b: bool, c: bool) -> Self {
        self.satisfies_a = a;
        self.satisfies_b = b;
        self.satisfies_c = c;
        self
    }

    #[inline]
    pub fn eval(&self, ctx: &NodeContext, y: &[f64], z: &[f64], zeta: &[f64], out: &mut [f64]) {
        (self.g)(ctx, y, z, zeta, out)
    }

    /// Scalar convenience; panics unless `m == 1`.
    pub fn eval_scalar(&self, ctx: &NodeContext, y: f64, z: &[f64], zeta: &[f64]) -> f64 {
        assert_eq!(self.m, 1, "eval_scalar needs a scalar driver");
        let mut out = [0.0];
        (self.g)(ctx, &[y], z, zeta, &mut out);
        out[0]
    }
}

/// Result of [`check_driver`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverCheck {
    pub samples: usize,
    /// Largest `|dg| / (|dy| + |dz| + |dzeta|_tau)` seen.
    pub worst_ratio: f64,
    pub lipschitz_ok: bool,
    /// `g(., 0, 0, 0)` finite at every sampled node.
    pub finite_at_zero: bool,
    /// Post-default `zeta` components never changed the output.
    pub mask_ok: bool,
}

impl DriverCheck {
    pub fn passed(&self) -> bool {
        self.lipschitz_ok && self.finite_at_zero && self.mask_ok
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spot-checks conditions (a) and (b) and the post-default mask on random
/// `(path, node, y, z, zeta)` draws.
pub fn check_driver<R: Rng>(
    driver: &DriverSpec,
    bundle: &PathBundle,
    forward: Option<&ForwardPaths>,
    samples: usize,
    rng: &mut R,
) -> Result<DriverCheck> {
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let (m, d, k) = (driver.m, bundle.d(), bundle.k());
    let mut worst: f64 = 0.0;
    let mut finite_at_zero = true;
    let mut mask_ok = true;
    let (mut g1, mut g2) = (vec![0.0; m], vec![0.0; m]);
    let draw = |rng: &mut R, n: usize| -> Vec<f64> { (0..n).map(|_| 4.0 * (rng.random::<f64>() - 0.5)).collect() };
    for _ in 0..samples {
        let p = rng.random_range(0..bundle.n_paths());
        let i = rng.random_range(0..=bundle.steps());
        let ctx = NodeContext::from_bundle(bundle, forward, p, i);
        driver.eval(&ctx, &vec![0.0; m], &vec![0.0; m * d], &vec![0.0; m * k], &mut g1);
        if g1.iter().any(|v| !v.is_finite()) {
            finite_at_zero = false;
        }
        let (y1, z1, s1) = (draw(rng, m), draw(rng, m * d), draw(rng, m * k));
        let (y2, z2, mut s2) = (draw(rng, m), draw(rng, m * d), draw(rng, m * k));
        driver.eval(&ctx, &y1, &z1, &s1, &mut g1);
        driver.eval(&ctx, &y2, &z2, &s2, &mut g2);
        let dg = norm(&g1.iter().zip(&g2).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dy = norm(&y1.iter().zip(&y2).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dz = norm(&z1.iter().zip(&z2).map(|(a, b)| a - b).collect::<Vec<_>>());
        let mut ds2 = 0.0;
        for c in 0..m {
            for j in 0..k {
                ds2 += (s1[c * k + j] - s2[c * k + j]).powi(2) * ctx.active_intensity(j);
            }
        }
        let denom = dy + dz + ds2.sqrt();
        if denom > 0.0 {
            worst = worst.max(dg / denom);
        }
        // perturb post-default components only; output must not move
        let mut moved = false;
        for c in 0..m {
            for j in 0..k {
                if !ctx.pre_default(j) {
                    s2[c * k + j] = s1[c * k + j] + 1.0;
                    moved = true;
                } else {
                    s2[c * k + j] = s1[c * k + j];
                }
            }
        }
        if moved {
            driver.eval(&ctx, &y1, &z1, &s2, &mut g2);
            if g1.iter().zip(&g2).any(|(a, b)| (a - b).abs() > 1e-12) {
                mask_ok = false;
            }
        }
    }
    Ok(DriverCheck {
        samples,
        worst_ratio: worst,
        lipschitz_ok: worst <= driver.lipschitz + 1e-9,
        finite_at_zero,
        mask_ok,
    })
}
