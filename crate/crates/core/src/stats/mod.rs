//! Paired statistics: relative change, BCa intervals, normality screen, paired and
//! multi-level tests, Holm adjustment, effect sizes, rank correlations.

mod bootstrap;
mod effect;
mod hypothesis;
mod normality;
pub mod pipeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bca_ci, bca_from_replicates, bootstrap_replicates, jackknife, BootstrapCI};
pub use effect::{cliffs_delta, kendall_tau_b, pearson, rank_corr, spearman, RankCorrKind};
pub use hypothesis::{
    holm_adjust, kruskal_wallis, mann_whitney_u, paired_t, wilcoxon_exact_distribution,
    wilcoxon_signed_rank,
};
pub use normality::shapiro_wilk;

/// Smallest admissible |reference score| for relative change.
pub const EPS_DEN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("reference score {0} too close to zero")]
    DegenerateBase(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ShapiroWilk,
    PairedT,
    Wilcoxon,
    KruskalWallis,
    MannWhitney,
}

impl TestKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::ShapiroWilk => "shapiro_wilk",
            TestKind::PairedT => "paired_t",
            TestKind::Wilcoxon => "wilcoxon",
            TestKind::KruskalWallis => "kruskal_wallis",
            TestKind::MannWhitney => "mann_whitney",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `100 (pert - orig) / orig`.
pub fn pct_delta(s_orig: f64, s_pert: f64) -> Result<f64, StatsError> {
    if !(s_orig.abs() > EPS_DEN) {
        return Err(StatsError::DegenerateBase(s_orig));
    }
    Ok(100.0 * (s_pert - s_orig) / s_orig)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Median; NaN for an empty slice.
pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    median_in_place(&mut v)
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let (_, hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Midranks (1-based) and the tie groups' sizes.
pub fn midranks(x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pct_delta_examples() {
        assert!((pct_delta(0.50, 0.53).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(pct_delta(0.3, 0.3).unwrap(), 0.0);
        assert!((pct_delta(0.621, 0.574).unwrap() - (-7.568438003220612)).abs() < 1e-12);
        assert!(matches!(pct_delta(1e-7, 0.5), Err(StatsError::DegenerateBase(_))));
    }

    #[test]
    fn medians_and_quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
    }

    #[test]
    fn midrank_ties() {
        let (r, t) = midranks(&[10.0, 20.0, 10.0, 30.0]);
        assert_eq!(r, vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(t, vec![2]);
    }
}
