//! Conditional expectations `E[. | G_{t_i}]` by least squares.
//!
//! Paths are grouped by their default configuration at the node (a bucket per
//! element of `{0,1}^k`). Inside a bucket the target is regressed on
//! standardized monomials of the forward state up to the basis degree. With no
//! forward state, or degree 0, the projection is the exact bucket mean.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jump_ito::ForwardPaths;
use crate::kernel::PathBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    /// Polynomial degree in each forward-state component.
    pub degree: usize,
    /// Ridge penalty (relative to the bucket size) on the non-constant terms.
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self { degree: 0, ridge: 0.0 }
    }
}

impl RegressionBasis {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn polynomial(degree: usize) -> Self {
        Self { degree, ridge: 1e-10 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::InvalidInput(format!("ridge must be finite and >= 0, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Standardized monomial `((x_c)^power - center) / scale`.
#[derive(Debug, Clone, Copy)]
struct Feature {
    component: usize,
    power: i32,
    center: f64,
    scale: f64,
}

impl Feature {
    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        (x[self.component].powi(self.power) - self.center) / self.scale
    }
}

struct BucketDesign {
    key: u64,
    paths: Vec<usize>,
    features: Vec<Feature>,
    /// `n_b x (1 + features)` design; `None` when the bucket falls back to its mean.
    design: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>,
}

/// Least-squares projector for one grid node.
pub struct NodeRegression {
    node: usize,
    n_paths: usize,
    buckets: Vec<BucketDesign>,
}

impl NodeRegression {
    pub fn new(bundle: &PathBundle, forward: Option<&ForwardPaths>, basis: &RegressionBasis, node: usize) -> Result<Self> {
        basis.validate()?;
        if node > bundle.steps() {
            return Err(Error::InvalidInput(format!("node {node} beyond grid with {} steps", bundle.steps())));
        }
        if let Some(fwd) = forward {
            if fwd.n_paths() != bundle.n_paths() || fwd.steps() != bundle.steps() {
                return Err(Error::Dimension {
                    what: "forward paths vs bundle",
                    expected: bundle.n_paths(),
                    got: fwd.n_paths(),
                });
            }
        }
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for p in 0..bundle.n_paths() {
            groups.entry(bundle.bucket(p, node)).or_default().push(p);
        }
        let buckets = groups
            .into_iter()
            .map(|(key, paths)| build_bucket(key, paths, forward, basis, node))
            .collect();
        Ok(Self { node, n_paths: bundle.n_paths(), buckets })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// Fitted conditional expectation of `values` (one per path).
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.n_paths, "one value per path");
        let mut out = vec![0.0; self.n_paths];
        for b in &self.buckets {
            let vals: Vec<f64> = b.paths.iter().map(|&p| values[p]).collect();
            match &b.design {
                None => {
                    let mean = crate::stats::pairwise_sum(&vals) / vals.len() as f64;
                    for &p in &b.paths {
                        out[p] = mean;
                    }
                }
                Some((design, chol)) => {
                    let rhs = design.tr_mul(&DVector::from_vec(vals));
                    let coef = chol.solve(&rhs);
                    let fitted = design * coef;
                    for (&p, f) in b.paths.iter().zip(fitted.iter()) {
                        out[p] = *f;
                    }
                }
            }
        }
        out
    }

    /// Coefficients of the fit in raw monomials, per bucket.
    pub fn fit(&self, values: &[f64]) -> NodeFit {
        assert_eq!(values.len(), self.n_paths, "one value per path");
        let fitted = self.project(values);
        let buckets = self
            .buckets
            .iter()
            .map(|b| {
                let vals: Vec<f64> = b.paths.iter().map(|&p| values[p]).collect();
                let n = vals.len() as f64;
                let mean = crate::stats::pairwise_sum(&vals) / n;
                let (intercept, terms) = match &b.design {
                    None => (mean, Vec::new()),
                    Some((design, chol)) => {
                        let coef = chol.solve(&design.tr_mul(&DVector::from_vec(vals.clone())));
                        let mut intercept = coef[0];
                        let terms = b
                            .features
                            .iter()
                            .enumerate()
                            .map(|(f, feat)| {
                                let beta = coef[f + 1] / feat.scale;
                                intercept -= beta * feat.center;
                                (feat.component, feat.power as usize, beta)
                            })
                            .collect();
                        (intercept, terms)
                    }
                };
                let ss_tot: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
                let ss_res: f64 = b.paths.iter().map(|&p| (values[p] - fitted[p]).powi(2)).sum();
                BucketFit {
                    key: b.key,
                    count: b.paths.len(),
                    intercept,
                    terms,
                    r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
                }
            })
            .collect();
        NodeFit { buckets }
    }

    /// Bucket key of every populated bucket with its path count.
    pub fn bucket_sizes(&self) -> Vec<(u64, usize)> {
        self.buckets.iter().map(|b| (b.key, b.paths.len())).collect()
    }

    pub(crate) fn bucket_paths(&self) -> impl Iterator<Item = (u64, &[usize])> {
        self.buckets.iter().map(|b| (b.key, b.paths.as_slice()))
    }
}

fn build_bucket(key: u64, paths: Vec<usize>, forward: Option<&ForwardPaths>, basis: &RegressionBasis, node: usize) -> BucketDesign {
    let fwd = match forward {
        Some(f) if basis.degree > 0 => f,
        _ => return BucketDesign { key, paths, features: Vec::new(), design: None },
    };
    let n = paths.len();
    let mut features = Vec::new();
    for c in 0..fwd.dim() {
        for power in 1..=basis.degree as i32 {
            let raw: Vec<f64> = paths.iter().map(|&p| fwd.x(p, node)[c].powi(power)).collect();
            let center = raw.iter().sum::<f64>() / n as f64;
            let var = raw.iter().map(|r| (r - center).powi(2)).sum::<f64>() / n as f64;
            let scale = var.sqrt();
            if scale > 1e-12 * (1.0 + center.abs()) {
                features.push(Feature { component: c, power, center, scale });
            }
        }
    }
    let q = features.len() + 1;
    if features.is_empty() || n < q + 1 {
        return BucketDesign { key, paths, features, design: None };
    }
    let design = DMatrix::from_fn(n, q, |r, col| {
        if col == 0 {
            1.0
        } else {
            features[col - 1].eval(fwd.x(paths[r], node))
        }
    });
    let mut gram = design.tr_mul(&design);
    for f in 1..q {
        gram[(f, f)] += basis.ridge * n as f64;
    }
    match Cholesky::new(gram) {
        Some(chol) => BucketDesign { key, paths, features, design: Some((design, chol)) },
        None => {
            log::warn!("node {node}: rank-deficient design in bucket {key:#b}, using bucket mean");
            BucketDesign { key, paths, features, design: None }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketFit {
    pub key: u64,
    pub count: usize,
    pub intercept: f64,
    /// `(component, power, coefficient)` in raw monomials.
    pub terms: Vec<(usize, usize, f64)>,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFit {
    pub buckets: Vec<BucketFit>,
}

impl NodeFit {
    pub fn bucket(&self, key: u64) -> Option<&BucketFit> {
        self.buckets.iter().find(|b| b.key == key)
    }

    /// Evaluates the fitted function at an arbitrary `(bucket, x)`. A bucket
    /// with no samples has no fit and evaluates to 0.
    pub fn evaluate(&self, key: u64, x: &[f64]) -> f64 {
        match self.bucket(key) {
            Some(b) => b.intercept + b.terms.iter().map(|&(c, pw, beta)| beta * x[c].powi(pw as i32)).sum::<f64>(),
            None => {
                log::warn!("no samples in bucket {key:#b}; conditional expectation set to 0");
                0.0
            }
        }
    }
}

/// One-shot projection of `values` onto the node-`node` information.
pub fn condition_expectation(
    values: &[f64],
    node: usize,
    bundle: &PathBundle,
    basis: &RegressionBasis,
    forward: Option<&ForwardPaths>,
) -> Result<Vec<f64>> {
    if values.len() != bundle.n_paths() {
        return Err(Error::Dimension { what: "values per path", expected: bundle.n_paths(), got: values.len() });
    }
    Ok(NodeRegression::new(bundle, forward, basis, node)?.project(values))
}
