//! Small Monte Carlo statistics helpers.
//!
//! Sums go through a fixed pairwise tree so results do not depend on how the
//! per-path values were produced (serially or with rayon).

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, se: 0.0, n };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n < 2 {
            return Self { mean, se: 0.0, n };
        }
        let var = pairwise_sum_map(xs, |x| (x - mean) * (x - mean)) / (n as f64 - 1.0);
        Self {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// `|mean - target| / se`; zero when both the gap and the error vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = self.mean - target;
        if self.se > 0.0 {
            gap / self.se
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(gap)
        }
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.mean - target).abs() <= n_se * self.se
    }
}

/// Root-sum-square of standard errors.
pub fn combined_se(ses: &[f64]) -> f64 {
    ses.iter().map(|s| s * s).sum::<f64>().sqrt()
}

const PAIRWISE_LEAF: usize = 64;

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_map(xs, |x| x)
}

pub fn pairwise_sum_map(xs: &[f64], f: impl Fn(f64) -> f64 + Copy) -> f64 {
    if xs.len() <= PAIRWISE_LEAF {
        return xs.iter().map(|&x| f(x)).sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum_map(&xs[..mid], f) + pairwise_sum_map(&xs[mid..], f)
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    let est = MeanEstimate::from_samples(xs);
    est.se * (est.n as f64).sqrt()
}

/// Ratio estimator `sum(num) / sum(den)` over paired samples with a
/// delta-method standard error.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> MeanEstimate {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    let mn = MeanEstimate::from_samples(num);
    let md = MeanEstimate::from_samples(den);
    if md.mean == 0.0 || n < 2 {
        return MeanEstimate { mean: f64::NAN, se: f64::NAN, n };
    }
    let r = mn.mean / md.mean;
    let resid: Vec<f64> = num.iter().zip(den).map(|(a, b)| a - r * b).collect();
    let sd = sample_std(&resid);
    MeanEstimate {
        mean: r,
        se: sd / (md.mean.abs() * (n as f64).sqrt()),
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_of_small_sample() {
        let est = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(est.mean, 2.5);
        // var = 5/3, se = sqrt(5/12)
        assert!((est.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_sample_has_zero_se() {
        let est = MeanEstimate::from_samples(&[7.0; 100]);
        assert_eq!(est.mean, 7.0);
        assert_eq!(est.se, 0.0);
        assert_eq!(est.z_score(7.0), 0.0);
    }

    #[test]
    fn pairwise_matches_naive_on_long_input() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }
}
