//! Risk of ranking flip at a fixed gap: the probability that the difference of two
//! independent draws from the paired-shift distribution exceeds the gap,
//! `Pr[δ' − δ > d]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::AuditRng;
use crate::stats::{bca_from_replicates, median};

pub const DEFAULT_GAPS_PCT: [f64; 4] = [0.3, 0.5, 0.7, 1.0];
pub const MIN_BOOT: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RrfError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Number of ordered pairs `(i, j)` over all `n²` with `s[j] - s[i] > d`, given sorted input.
fn exceed_count_sorted(sorted: &[f64], d: f64) -> usize {
    let n = sorted.len();
    let mut count = 0;
    let mut j = 0;
    // For increasing s[i], the first index with s[j] > s[i] + d never moves left.
    for &si in sorted {
        let threshold = si + d;
        if j < n && sorted[j] <= threshold {
            j += sorted[j..].partition_point(|&v| v <= threshold);
        }
        count += n - j;
    }
    count
}

/// Ordered pairs counted as flips: difference above `d` and nonzero. Zero differences
/// (including every self-pair) only matter for negative gaps, where they are left out.
fn flip_count_sorted(sorted: &[f64], d: f64) -> usize {
    let mut count = exceed_count_sorted(sorted, d);
    if d < 0.0 {
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i..].partition_point(|&v| v == sorted[i]);
            count -= t * t;
            i += t;
        }
    }
    count
}

fn sorted_copy(s: &[f64]) -> Vec<f64> {
    let mut v = s.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Fraction of all `n²` ordered pairs drawn from `shifts` whose difference exceeds `d`
/// (zero differences never count).
pub fn rrf_exhaustive(shifts: &[f64], d: f64) -> Result<f64, RrfError> {
    if shifts.is_empty() {
        return Err(RrfError::InsufficientData("no shifts".into()));
    }
    let n = shifts.len();
    Ok(flip_count_sorted(&sorted_copy(shifts), d) as f64 / (n * n) as f64)
}

/// Gap given in percent of the score range, in raw score units.
pub fn gap_to_raw(d_pct: f64, range_width: f64) -> f64 {
    d_pct / 100.0 * range_width
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrfEstimate {
    pub scorer: String,
    pub family: String,
    pub d_pct: f64,
    pub d_raw: f64,
    pub rrf: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Exhaustive estimate over the pooled shifts.
    pub exhaustive: f64,
    pub n_items: usize,
    pub n_boot: usize,
    pub seed: u64,
    /// Point estimate rose above the previous (smaller) gap by more than its CI half-width.
    pub monotonicity_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrfParams {
    pub gaps_pct: Vec<f64>,
    pub n_boot: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for RrfParams {
    fn default() -> Self {
        Self { gaps_pct: DEFAULT_GAPS_PCT.to_vec(), n_boot: 10_000, seed: 2025, confidence: 0.95 }
    }
}

/// Bootstrap estimate from per-item shift groups (one entry per transform of the family).
/// Each replicate resamples items with replacement, draws one transform per item uniformly,
/// and takes the exceedance fraction over ordered pairs of distinct positions. The point
/// estimate is the replicate median; the interval is BCa with a leave-one-item-out
/// jackknife of the exhaustive statistic.
pub fn rrf_bootstrap_grouped(
    groups: &[Vec<f64>],
    d: f64,
    n_boot: usize,
    seed: u64,
    confidence: f64,
) -> Result<(f64, f64, f64, f64), RrfError> {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let n = groups.len();
    if n == 0 {
        return Err(RrfError::InsufficientData("no items with shifts".into()));
    }
    if n_boot < MIN_BOOT {
        return Err(RrfError::Config(format!("n_boot must be at least {MIN_BOOT}, got {n_boot}")));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let exhaustive = rrf_exhaustive(&pooled, d)?;
    if n == 1 {
        return Ok((0.0, 0.0, 0.0, exhaustive));
    }
    let reps: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, b| {
                let mut rng = AuditRng::with_stream(seed, b as u64);
                for slot in buf.iter_mut() {
                    let g = groups[rng.below(n)];
                    *slot = g[rng.below(g.len())];
                }
                buf.sort_by(f64::total_cmp);
                flip_count_sorted(buf, d) as f64 / (n * (n - 1)) as f64
            },
        )
        .collect();
    let point = median(&reps);
    let jack: Vec<f64> = (0..n)
        .map(|i| {
            let rest: Vec<f64> = groups
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, g)| g.iter().copied())
                .collect();
            rrf_exhaustive(&rest, d).unwrap_or(0.0)
        })
        .collect();
    let ci = bca_from_replicates(point, &reps, &jack, confidence, seed);
    Ok((point, ci.lo, ci.hi, exhaustive))
}

/// Bootstrap estimate treating each shift as its own item.
pub fn rrf_bootstrap(
    shifts: &[f64],
    d: f64,
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64, f64), RrfError> {
    let groups: Vec<Vec<f64>> = shifts.iter().map(|&s| vec![s]).collect();
    let (p, lo, hi, _) = rrf_bootstrap_grouped(&groups, d, n_boot, seed, 0.95)?;
    Ok((p, lo, hi))
}

/// Estimates at every gap (percent of `range_width`), flagging non-monotone points.
pub fn gap_sweep(
    scorer: &str,
    family: &str,
    groups: &[Vec<f64>],
    range_width: f64,
    params: &RrfParams,
) -> Result<Vec<RrfEstimate>, RrfError> {
    if params.gaps_pct.is_empty() {
        return Err(RrfError::Config("gap list is empty".into()));
    }
    if params.gaps_pct.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(RrfError::Config("gaps must be finite and nonnegative".into()));
    }
    let mut gaps = params.gaps_pct.clone();
    gaps.sort_by(f64::total_cmp);
    gaps.dedup();
    let n_items = groups.iter().filter(|g| !g.is_empty()).count();
    let mut out: Vec<RrfEstimate> = Vec::with_capacity(gaps.len());
    for d_pct in gaps {
        let d_raw = gap_to_raw(d_pct, range_width);
        let (rrf, lo, hi, exhaustive) =
            rrf_bootstrap_grouped(groups, d_raw, params.n_boot, params.seed, params.confidence)?;
        let monotonicity_flag = out
            .last()
            .is_some_and(|prev| rrf - prev.rrf > 0.5 * (prev.ci_hi - prev.ci_lo));
        out.push(RrfEstimate {
            scorer: scorer.to_string(),
            family: family.to_string(),
            d_pct,
            d_raw,
            rrf,
            ci_lo: lo,
            ci_hi: hi,
            exhaustive,
            n_items,
            n_boot: params.n_boot,
            seed: params.seed,
            monotonicity_flag,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_examples() {
        assert_eq!(rrf_exhaustive(&[-1.0, 0.0, 2.0], 0.7).unwrap(), 3.0 / 9.0);
        assert_eq!(rrf_exhaustive(&[0.3; 6], 0.001).unwrap(), 0.0);
        let distinct = [0.1, -0.4, 0.9, 0.25, 2.0];
        assert_eq!(rrf_exhaustive(&distinct, -1e9).unwrap(), 20.0 / 25.0);
        assert_eq!(rrf_exhaustive(&[1.0, 1.0, 2.0], -1e9).unwrap(), 4.0 / 9.0);
        // Strictly positive differences only: (n² − n) / 2 of them for distinct values.
        assert_eq!(rrf_exhaustive(&distinct, 0.0).unwrap(), 10.0 / 25.0);
        assert!(rrf_exhaustive(&[], 0.1).is_err());
    }

    #[test]
    fn single_point_is_zero() {
        assert_eq!(rrf_bootstrap(&[0.4], 0.007, 1000, 2025).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_sweep_is_config_error() {
        let p = RrfParams { gaps_pct: vec![], ..Default::default() };
        assert!(matches!(gap_sweep("s", "f", &[vec![0.1]], 1.0, &p), Err(RrfError::Config(_))));
    }

    #[test]
    fn conversion() {
        assert!((gap_to_raw(0.7, 1.0) - 0.007).abs() < 1e-15);
        assert!((gap_to_raw(0.7, 100.0) - 0.7).abs() < 1e-12);
    }
}
