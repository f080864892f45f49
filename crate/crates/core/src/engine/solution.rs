//! Node fields `(Y, Z, zeta)` and the solver output.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::PathBundle;
use crate::regression::RegressionBasis;

/// Shortest round-trip-safe text form with 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.16e}")
}

/// `Y` at nodes `0..=N`, `Z` and `zeta` at nodes `0..N`; node-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFields {
    n_paths: usize,
    steps: usize,
    m: usize,
    d: usize,
    k: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    zeta: Vec<f64>,
}

impl NodeFields {
    pub fn zeros(n_paths: usize, steps: usize, m: usize, d: usize, k: usize) -> Self {
        Self {
            n_paths,
            steps,
            m,
            d,
            k,
            y: vec![0.0; (steps + 1) * n_paths * m],
            z: vec![0.0; steps * n_paths * m * d],
            zeta: vec![0.0; steps * n_paths * m * k],
        }
    }

    pub fn for_bundle(bundle: &PathBundle, m: usize) -> Self {
        Self::zeros(bundle.n_paths(), bundle.steps(), m, bundle.d(), bundle.k())
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn y(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.m;
        &self.y[o..o + self.m]
    }

    #[inline]
    pub fn y_mut(&mut self, p: usize, i: usize) -> &mut [f64] {
        let o = (i * self.n_paths + p) * self.m;
        &mut self.y[o..o + self.m]
    }

    /// `Z` at node `i < N`, row-major `m x d`.
    #[inline]
    pub fn z(&self, p: usize, i: usize) -> &[f64] {
        let w = self.m * self.d;
        let o = (i * self.n_paths + p) * w;
        &self.z[o..o + w]
    }

    #[inline]
    pub fn z_mut(&mut self, p: usize, i: usize) -> &mut [f64] {
        let w = self.m * self.d;
        let o = (i * self.n_paths + p) * w;
        &mut self.z[o..o + w]
    }

    /// `zeta` at node `i < N`, row-major `m x k`.
    #[inline]
    pub fn zeta(&self, p: usize, i: usize) -> &[f64] {
        let w = self.m * self.k;
        let o = (i * self.n_paths + p) * w;
        &self.zeta[o..o + w]
    }

    #[inline]
    pub fn zeta_mut(&mut self, p: usize, i: usize) -> &mut [f64] {
        let w = self.m * self.k;
        let o = (i * self.n_paths + p) * w;
        &mut self.zeta[o..o + w]
    }

    /// All `Y` values at node `i`, flat `p * m + c`.
    pub fn y_node(&self, i: usize) -> &[f64] {
        let w = self.n_paths * self.m;
        &self.y[i * w..(i + 1) * w]
    }

    pub(crate) fn y_node_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.n_paths * self.m;
        &mut self.y[i * w..(i + 1) * w]
    }

    pub(crate) fn z_node_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.n_paths * self.m * self.d;
        &mut self.z[i * w..(i + 1) * w]
    }

    pub(crate) fn zeta_node_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.n_paths * self.m * self.k;
        &mut self.zeta[i * w..(i + 1) * w]
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.n_paths, self.steps, self.m, self.d, self.k) == (other.n_paths, other.steps, other.m, other.d, other.k)
    }

    /// `self - other`, field by field.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::InvalidInput("field shapes differ".into()));
        }
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        Ok(Self { y: sub(&self.y, &other.y), z: sub(&self.z, &other.z), zeta: sub(&self.zeta, &other.zeta), ..*self })
    }
}

/// Grid and scheme metadata carried by a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeMeta {
    pub horizon: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub basis: RegressionBasis,
    pub theta: f64,
}

impl SchemeMeta {
    pub fn same_grid(&self, other: &Self) -> bool {
        self.horizon == other.horizon && self.steps == other.steps && self.n_paths == other.n_paths && self.seed == other.seed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub fields: NodeFields,
    /// Mean of `Y_0` per component.
    pub y0: Vec<f64>,
    pub y0_se: Vec<f64>,
    /// Pathwise estimator `xi + sum_i (Y_i - E[Y_{i+1} | G_i])`, flat `p * m + c`;
    /// its sample mean is `y0`.
    pub y0_paths: Vec<f64>,
    pub meta: SchemeMeta,
}

impl BsdeSolution {
    /// First component of `y0`.
    pub fn y0(&self) -> f64 {
        self.y0[0]
    }

    pub fn y0_se(&self) -> f64 {
        self.y0_se[0]
    }

    pub fn y(&self, p: usize, i: usize) -> f64 {
        self.fields.y(p, i)[0]
    }

    pub fn n_paths(&self) -> usize {
        self.fields.n_paths
    }

    pub fn steps(&self) -> usize {
        self.fields.steps
    }

    /// One row per `(path, node)`: `path,node,t,H_1..H_k,Y..,Z..,zeta..`.
    /// `Z` and `zeta` are empty at the terminal node.
    pub fn write_csv<W: Write>(&self, bundle: &PathBundle, mut w: W) -> Result<()> {
        let f = &self.fields;
        if bundle.n_paths() != f.n_paths || bundle.steps() != f.steps || bundle.k() != f.k || bundle.d() != f.d {
            return Err(Error::InvalidInput("bundle does not match the solution".into()));
        }
        let (m, d, k) = (f.m, f.d, f.k);
        let suffix = |c: usize| if m == 1 { String::new() } else { format!("_{}", c + 1) };
        let mut header = vec!["path".to_string(), "node".into(), "t".into()];
        header.extend((1..=k).map(|j| format!("H_{j}")));
        header.extend((0..m).map(|c| if m == 1 { "Y".into() } else { format!("Y_{}", c + 1) }));
        for c in 0..m {
            header.extend((1..=d).map(|l| format!("Z{}_{l}", suffix(c))));
        }
        for c in 0..m {
            header.extend((1..=k).map(|j| format!("zeta{}_{j}", suffix(c))));
        }
        writeln!(w, "{}", header.join(","))?;
        let mut row = String::new();
        for p in 0..f.n_paths {
            for i in 0..=f.steps {
                row.clear();
                row.push_str(&format!("{p},{i},{}", format_float(bundle.grid().t(i))));
                for &h in bundle.h(p, i) {
                    row.push_str(&format!(",{h}"));
                }
                for &y in f.y(p, i) {
                    row.push(',');
                    row.push_str(&format_float(y));
                }
                if i < f.steps {
                    for &v in f.z(p, i).iter().chain(f.zeta(p, i)) {
                        row.push(',');
                        row.push_str(&format_float(v));
                    }
                } else {
                    row.push_str(&",".repeat(m * (d + k)));
                }
                writeln!(w, "{row}")?;
            }
        }
        Ok(())
    }
}
