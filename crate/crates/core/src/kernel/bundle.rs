//! Joint simulation of Brownian increments, default indicators and compensated
//! default martingale increments.
//!
//! # Binary layout
//!
//! [`PathBundle::write_to`] produces a little-endian columnar file:
//!
//! | field        | type      | count            |
//! |--------------|-----------|------------------|
//! | magic        | `[u8; 8]` | `b"DBSDEPB1"`    |
//! | n_paths      | `u64`     | 1                |
//! | steps (N)    | `u64`     | 1                |
//! | d            | `u64`     | 1                |
//! | k            | `u64`     | 1                |
//! | seed         | `u64`     | 1                |
//! | horizon (T)  | `f64`     | 1                |
//! | grid gamma   | `f64`     | `(N+1) * k`      |
//! | cum. hazard  | `f64`     | `(N+1) * k`      |
//! | dB           | `f64`     | `n * N * d`      |
//! | H            | `f64`     | `n * (N+1) * k`  |
//! | dM           | `f64`     | `n * N * k`      |
//!
//! Columns are stored path-major, then node, then component.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use super::rng::path_rng;
use super::{DefaultModel, TimeGrid};
use crate::error::{invalid, Error, Result};

pub const BUNDLE_MAGIC: &[u8; 8] = b"DBSDEPB1";

/// Default indicator paths on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultPaths {
    pub n_paths: usize,
    pub steps: usize,
    pub k: usize,
    /// `H[p][i][j]`, flat `(p * (N+1) + i) * k + j`.
    pub h: Vec<u8>,
    /// First node at which default `j` of path `p` is visible, flat `p * k + j`.
    pub default_node: Vec<Option<usize>>,
}

impl DefaultPaths {
    pub fn h(&self, p: usize, i: usize) -> &[u8] {
        let off = (p * (self.steps + 1) + i) * self.k;
        &self.h[off..off + self.k]
    }
}

/// Inverse-cumulative-hazard draw: default `j` flips at the first node where
/// `Gamma_j(t_i) >= E_j`.
fn draw_default_nodes<R: Rng>(rng: &mut R, cum: &[f64], k: usize, steps: usize) -> Vec<Option<usize>> {
    (0..k)
        .map(|j| {
            let e: f64 = rng.sample(Exp1);
            (1..=steps).find(|&i| cum[i * k + j] >= e)
        })
        .collect()
}

fn fill_indicators(nodes: &[Option<usize>], k: usize, steps: usize, out: &mut [u8]) {
    for i in 0..=steps {
        for (j, node) in nodes.iter().enumerate() {
            out[i * k + j] = matches!(node, Some(n) if i >= *n) as u8;
        }
    }
}

pub fn simulate_defaults(model: &DefaultModel, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<DefaultPaths> {
    model.validate(grid)?;
    if n_paths == 0 {
        return invalid("n_paths must be at least 1");
    }
    let k = model.k();
    let steps = grid.steps();
    let cum = model.cumulative_on_grid(grid);
    let per_path: Vec<Vec<Option<usize>>> = (0..n_paths)
        .into_par_iter()
        .map(|p| draw_default_nodes(&mut path_rng(seed, p as u64), &cum, k, steps))
        .collect();
    let mut h = vec![0u8; n_paths * (steps + 1) * k];
    h.par_chunks_mut((steps + 1) * k.max(1))
        .zip(per_path.par_iter())
        .for_each(|(chunk, nodes)| fill_indicators(nodes, k, steps, chunk));
    Ok(DefaultPaths {
        n_paths,
        steps,
        k,
        h,
        default_node: per_path.into_iter().flatten().collect(),
    })
}

/// Simulated `(dB, H, dM)` on a grid, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    n_paths: usize,
    d: usize,
    k: usize,
    seed: u64,
    gamma: Vec<f64>,
    cum_hazard: Vec<f64>,
    db: Vec<f64>,
    h: Vec<u8>,
    dm: Vec<f64>,
}

struct PathDraw {
    db: Vec<f64>,
    h: Vec<u8>,
    dm: Vec<f64>,
}

pub fn simulate_bundle(model: &DefaultModel, grid: &TimeGrid, d: usize, n_paths: usize, seed: u64) -> Result<PathBundle> {
    model.validate(grid)?;
    if n_paths == 0 {
        return invalid("n_paths must be at least 1");
    }
    let k = model.k();
    if k >= 64 {
        return invalid("at most 63 default times are supported");
    }
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let cum_hazard = model.cumulative_on_grid(grid);
    let gamma = grid_intensities(&cum_hazard, k, steps, dt);

    let draws: Vec<PathDraw> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p as u64);
            let nodes = draw_default_nodes(&mut rng, &cum_hazard, k, steps);
            let db: Vec<f64> = (0..steps * d)
                .map(|_| sqrt_dt * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut h = vec![0u8; (steps + 1) * k];
            fill_indicators(&nodes, k, steps, &mut h);
            let mut dm = vec![0.0; steps * k];
            for i in 0..steps {
                for j in 0..k {
                    dm[i * k + j] = compensated_increment(h[i * k + j], h[(i + 1) * k + j], gamma[i * k + j], dt);
                }
            }
            PathDraw { db, h, dm }
        })
        .collect();

    let mut db = Vec::with_capacity(n_paths * steps * d);
    let mut h = Vec::with_capacity(n_paths * (steps + 1) * k);
    let mut dm = Vec::with_capacity(n_paths * steps * k);
    for draw in draws {
        db.extend_from_slice(&draw.db);
        h.extend_from_slice(&draw.h);
        dm.extend_from_slice(&draw.dm);
    }
    Ok(PathBundle {
        grid: grid.clone(),
        n_paths,
        d,
        k,
        seed,
        gamma,
        cum_hazard,
        db,
        h,
        dm,
    })
}

/// One-step default probability per unit time,
/// `(1 - exp(-(Gamma(t_{i+1}) - Gamma(t_i)))) / dt`; the last node repeats the
/// last step. With this rate the compensated increment below has conditional
/// mean exactly zero on the grid.
fn grid_intensities(cum: &[f64], k: usize, steps: usize, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; (steps + 1) * k];
    for i in 0..steps {
        for j in 0..k {
            out[i * k + j] = -(-(cum[(i + 1) * k + j] - cum[i * k + j])).exp_m1() / dt;
        }
    }
    for j in 0..k {
        out[steps * k + j] = out[(steps - 1) * k + j];
    }
    out
}

/// `dM = (H_{i+1} - H_i) - 1{H_i = 0} gamma_i dt` with the grid intensity `gamma_i`.
#[inline]
fn compensated_increment(h_now: u8, h_next: u8, gamma: f64, dt: f64) -> f64 {
    let jump = f64::from(h_next) - f64::from(h_now);
    if h_now == 0 {
        jump - gamma * dt
    } else {
        jump
    }
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Brownian increment over `[t_i, t_{i+1}]`.
    #[inline]
    pub fn db(&self, p: usize, i: usize) -> &[f64] {
        let off = (p * self.steps() + i) * self.d;
        &self.db[off..off + self.d]
    }

    /// Default indicators at node `i`.
    #[inline]
    pub fn h(&self, p: usize, i: usize) -> &[u8] {
        let off = (p * (self.steps() + 1) + i) * self.k;
        &self.h[off..off + self.k]
    }

    /// Compensated increment over `[t_i, t_{i+1}]`.
    #[inline]
    pub fn dm(&self, p: usize, i: usize) -> &[f64] {
        let off = (p * self.steps() + i) * self.k;
        &self.dm[off..off + self.k]
    }

    /// Grid intensities at node `i`: the probability of default during step
    /// `i` per unit time, which is what the compensator of `dM` uses.
    #[inline]
    pub fn gamma(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.k..(i + 1) * self.k]
    }

    pub fn cumulative_hazard(&self, i: usize) -> &[f64] {
        &self.cum_hazard[i * self.k..(i + 1) * self.k]
    }

    /// Default configuration at node `i` as a bitmask (bit `j` set once default `j` occurred).
    #[inline]
    pub fn bucket(&self, p: usize, i: usize) -> u64 {
        self.h(p, i)
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &h)| acc | (u64::from(h) << j))
    }

    #[inline]
    pub fn alive(&self, p: usize, i: usize, j: usize) -> bool {
        self.h(p, i)[j] == 0
    }

    /// Probability that default `j` flips during step `i` given it has not yet
    /// occurred: `1 - exp(-(Gamma(t_{i+1}) - Gamma(t_i)))`.
    pub fn step_default_prob(&self, i: usize, j: usize) -> f64 {
        let inc = self.cum_hazard[(i + 1) * self.k + j] - self.cum_hazard[i * self.k + j];
        -(-inc).exp_m1()
    }

    /// Conditional variance of `dM^j` over step `i` for a surviving name.
    pub fn step_jump_variance(&self, i: usize, j: usize) -> f64 {
        let q = self.step_default_prob(i, j);
        q * (1.0 - q)
    }

    pub fn default_node(&self, p: usize, j: usize) -> Option<usize> {
        (1..=self.steps()).find(|&i| self.h(p, i)[j] == 1)
    }

    /// `B_{t_i}` for component `l`.
    pub fn brownian_at(&self, p: usize, i: usize, l: usize) -> f64 {
        (0..i).map(|s| self.db(p, s)[l]).sum()
    }

    /// `M_{t_i}` for component `j`.
    pub fn martingale_at(&self, p: usize, i: usize, j: usize) -> f64 {
        (0..i).map(|s| self.dm(p, s)[j]).sum()
    }

    /// Copy with paths reordered: path `q` of the result is path `perm[q]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<PathBundle> {
        if perm.len() != self.n_paths {
            return Err(Error::Dimension { what: "permutation length", expected: self.n_paths, got: perm.len() });
        }
        let mut seen = vec![false; self.n_paths];
        for &p in perm {
            if p >= self.n_paths || std::mem::replace(&mut seen[p], true) {
                return invalid("not a permutation of the path indices");
            }
        }
        let steps = self.steps();
        let mut out = self.clone();
        for (q, &p) in perm.iter().enumerate() {
            let (bd, hk, mk) = (steps * self.d, (steps + 1) * self.k, steps * self.k);
            out.db[q * bd..(q + 1) * bd].copy_from_slice(&self.db[p * bd..(p + 1) * bd]);
            out.h[q * hk..(q + 1) * hk].copy_from_slice(&self.h[p * hk..(p + 1) * hk]);
            out.dm[q * mk..(q + 1) * mk].copy_from_slice(&self.dm[p * mk..(p + 1) * mk]);
        }
        Ok(out)
    }

    /// Checks every structural invariant: indicators start at zero, are
    /// nondecreasing, and `dM` equals the compensated jump bit-for-bit.
    pub fn validate(&self) -> Result<()> {
        let dt = self.dt();
        for p in 0..self.n_paths {
            if self.h(p, 0).iter().any(|&h| h != 0) {
                return invalid(format!("path {p}: indicator nonzero at t=0"));
            }
            for i in 0..self.steps() {
                for j in 0..self.k {
                    let (a, b) = (self.h(p, i)[j], self.h(p, i + 1)[j]);
                    if a > 1 || b > 1 || b < a {
                        return invalid(format!("path {p}: indicator {j} not a one-jump process at node {i}"));
                    }
                    let expect = compensated_increment(a, b, self.gamma(i)[j], dt);
                    if self.dm(p, i)[j].to_bits() != expect.to_bits() {
                        return invalid(format!("path {p}: dM^{j} at node {i} differs from the compensated jump"));
                    }
                }
            }
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn dm_mut(&mut self) -> &mut [f64] {
        &mut self.dm
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BUNDLE_MAGIC)?;
        for v in [self.n_paths, self.steps(), self.d, self.k] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.grid.horizon().to_le_bytes())?;
        let mut put = |xs: &mut dyn Iterator<Item = f64>| -> std::io::Result<()> {
            for x in xs {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        put(&mut self.gamma.iter().copied())?;
        put(&mut self.cum_hazard.iter().copied())?;
        put(&mut self.db.iter().copied())?;
        put(&mut self.h.iter().map(|&h| f64::from(h)))?;
        put(&mut self.dm.iter().copied())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<PathBundle> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n_paths = next_u64(&mut r)? as usize;
        let steps = next_u64(&mut r)? as usize;
        let d = next_u64(&mut r)? as usize;
        let k = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let horizon = f64::from_bits(next_u64(&mut r)?);
        let grid = TimeGrid::new(horizon, steps).map_err(|e| Error::Format(e.to_string()))?;
        if n_paths == 0 || k >= 64 {
            return Err(Error::Format(format!("unsupported header n_paths={n_paths} k={k}")));
        }
        let take = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let gamma = take(&mut r, (steps + 1) * k)?;
        let cum_hazard = take(&mut r, (steps + 1) * k)?;
        let db = take(&mut r, n_paths * steps * d)?;
        let h_raw = take(&mut r, n_paths * (steps + 1) * k)?;
        let dm = take(&mut r, n_paths * steps * k)?;
        let h = h_raw
            .iter()
            .map(|&x| match x {
                0.0 => Ok(0u8),
                1.0 => Ok(1u8),
                _ => Err(Error::Format(format!("indicator value {x} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let bundle = PathBundle { grid, n_paths, d, k, seed, gamma, cum_hazard, db, h, dm };
        bundle.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_grid, Intensity};

    #[test]
    fn zero_intensity_never_defaults() {
        let grid = build_grid(1.0, 20).unwrap();
        let model = DefaultModel::constant(2, 0.0);
        let paths = simulate_defaults(&model, &grid, 2000, 1).unwrap();
        assert!(paths.h.iter().all(|&h| h == 0));
        let bundle = simulate_bundle(&model, &grid, 1, 500, 1).unwrap();
        assert!(bundle.dm.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn defaults_agree_with_bundle_indicators() {
        let grid = build_grid(1.0, 25).unwrap();
        let model = DefaultModel::constant(2, 0.7);
        let paths = simulate_defaults(&model, &grid, 300, 99).unwrap();
        let bundle = simulate_bundle(&model, &grid, 2, 300, 99).unwrap();
        for p in 0..300 {
            for i in 0..=25 {
                assert_eq!(paths.h(p, i), bundle.h(p, i));
            }
            for j in 0..2 {
                assert_eq!(paths.default_node[p * 2 + j], bundle.default_node(p, j));
            }
        }
    }

    #[test]
    fn compensator_identity_and_structure_hold() {
        let grid = build_grid(2.0, 30).unwrap();
        let model = DefaultModel::new(
            vec![Intensity::Linear { start: 0.2, slope: 0.5 }, Intensity::constant(1.3)],
            1.3,
        );
        let bundle = simulate_bundle(&model, &grid, 2, 2000, 5).unwrap();
        bundle.validate().unwrap();
        let dt = grid.dt();
        for p in 0..50 {
            for i in 0..30 {
                for j in 0..2 {
                    let h0 = f64::from(bundle.h(p, i)[j]);
                    let h1 = f64::from(bundle.h(p, i + 1)[j]);
                    let pre = if h0 == 0.0 { 1.0 } else { 0.0 };
                    assert_eq!(bundle.dm(p, i)[j], (h1 - h0) - pre * bundle.gamma(i)[j] * dt);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let grid = build_grid(1.0, 10).unwrap();
        let model = DefaultModel::constant(1, 0.4);
        let a = simulate_bundle(&model, &grid, 2, 1000, 17).unwrap();
        let b = simulate_bundle(&model, &grid, 2, 1000, 17).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = simulate_bundle(&model, &grid, 2, 1000, 18).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn path_prefix_is_stable_under_path_count() {
        // per-path streams: the first paths do not change when more are added
        let grid = build_grid(1.0, 10).unwrap();
        let model = DefaultModel::constant(1, 0.4);
        let a = simulate_bundle(&model, &grid, 1, 100, 3).unwrap();
        let b = simulate_bundle(&model, &grid, 1, 400, 3).unwrap();
        for p in 0..100 {
            for i in 0..10 {
                assert_eq!(a.db(p, i), b.db(p, i));
                assert_eq!(a.h(p, i), b.h(p, i));
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let grid = build_grid(1.5, 12).unwrap();
        let model = DefaultModel::constant(2, 0.9);
        let bundle = simulate_bundle(&model, &grid, 3, 64, 8).unwrap();
        let bytes = bundle.to_bytes();
        let expected_len = 8 + 6 * 8 + 8 * (2 * 13 * 2 + 64 * 12 * 3 + 64 * 13 * 2 + 64 * 12 * 2);
        assert_eq!(bytes.len(), expected_len);
        let back = PathBundle::read_from(&bytes[..]).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let grid = build_grid(1.0, 4).unwrap();
        let bundle = simulate_bundle(&DefaultModel::constant(1, 0.5), &grid, 1, 8, 8).unwrap();
        let mut bytes = bundle.to_bytes();
        bytes[0] = b'X';
        assert!(PathBundle::read_from(&bytes[..]).is_err());
        let bytes = bundle.to_bytes();
        assert!(PathBundle::read_from(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn rejects_empty_bundle() {
        let grid = build_grid(1.0, 4).unwrap();
        assert!(simulate_bundle(&DefaultModel::constant(1, 0.5), &grid, 1, 0, 1).is_err());
    }

    #[test]
    fn permutation_moves_whole_paths() {
        let grid = build_grid(1.0, 5).unwrap();
        let bundle = simulate_bundle(&DefaultModel::constant(1, 2.0), &grid, 1, 4, 2).unwrap();
        let perm = [3, 0, 2, 1];
        let shuffled = bundle.permuted(&perm).unwrap();
        for (q, &p) in perm.iter().enumerate() {
            assert_eq!(shuffled.db(q, 2), bundle.db(p, 2));
            assert_eq!(shuffled.h(q, 5), bundle.h(p, 5));
        }
        assert!(bundle.permuted(&[0, 0, 1, 2]).is_err());
    }
}
