//! Bias-corrected and accelerated bootstrap intervals.
//!
//! Replicate `b` draws its resample indices from its own stream `(seed, b)`, so evaluating
//! replicates in parallel cannot change the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{quantile_sorted, StatsError};
use crate::rng::AuditRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

impl BootstrapCI {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Statistic evaluated on `n_resamples` with-replacement resamples of `x`.
pub fn bootstrap_replicates<F>(x: &[f64], stat: &F, n_resamples: usize, seed: u64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    (0..n_resamples)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, b| {
                let mut rng = AuditRng::with_stream(seed, b as u64);
                for slot in buf.iter_mut() {
                    *slot = x[rng.below(n)];
                }
                stat(buf)
            },
        )
        .collect()
}

/// Leave-one-out values of the statistic.
pub fn jackknife<F>(x: &[f64], stat: &F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let loo: Vec<f64> =
                x.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
            stat(&loo)
        })
        .collect()
}

/// BCa interval from precomputed replicates and jackknife values. The bias correction uses
/// the mid-rank share of replicates below the point estimate; when that share is 0 or 1
/// the plain percentile interval is returned. The interval is widened to include `point`.
pub fn bca_from_replicates(
    point: f64,
    replicates: &[f64],
    jack: &[f64],
    confidence: f64,
    seed: u64,
) -> BootstrapCI {
    let b = replicates.len();
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    let norm = std_normal();

    let below = replicates.iter().filter(|&&r| r < point).count();
    let at_or_below = replicates.iter().filter(|&&r| r <= point).count();
    let share = (below + at_or_below) as f64 / (2.0 * b as f64);

    let (q_lo, q_hi) = if share <= 0.0 || share >= 1.0 {
        (alpha / 2.0, 1.0 - alpha / 2.0)
    } else {
        let z0 = norm.inverse_cdf(share);
        let jm = jack.iter().sum::<f64>() / jack.len() as f64;
        let num: f64 = jack.iter().map(|t| (jm - t).powi(3)).sum();
        let den: f64 = jack.iter().map(|t| (jm - t).powi(2)).sum();
        let a = if den > 0.0 { num / (6.0 * den.powf(1.5)) } else { 0.0 };
        let adj = |z: f64| {
            let s = z0 + z;
            norm.cdf(z0 + s / (1.0 - a * s))
        };
        (adj(norm.inverse_cdf(alpha / 2.0)), adj(norm.inverse_cdf(1.0 - alpha / 2.0)))
    };
    let lo = quantile_sorted(&sorted, q_lo).min(point);
    let hi = quantile_sorted(&sorted, q_hi).max(point);
    BootstrapCI { point, lo, hi, n_resamples: b, seed }
}

/// 95% (or `confidence`) BCa interval of `stat` over `x`.
pub fn bca_ci<F>(
    x: &[f64],
    stat: &F,
    n_resamples: usize,
    seed: u64,
    confidence: f64,
) -> Result<BootstrapCI, StatsError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if x.len() < 3 {
        return Err(StatsError::InsufficientData(format!("bootstrap needs 3 samples, got {}", x.len())));
    }
    if n_resamples == 0 {
        return Err(StatsError::InvalidInput("zero resamples".into()));
    }
    let point = stat(x);
    let reps = bootstrap_replicates(x, stat, n_resamples, seed);
    let jack = jackknife(x, stat);
    Ok(bca_from_replicates(point, &reps, &jack, confidence, seed))
}
