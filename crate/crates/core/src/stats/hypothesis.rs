//! Paired t, Wilcoxon signed-rank, Kruskal–Wallis, Mann–Whitney and Holm adjustment.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use super::{midranks, StatsError, TestKind, TestResult};

/// Largest zero-free sample handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 25;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Two-sided paired t-test on `pert - orig`.
pub fn paired_t(orig: &[f64], pert: &[f64]) -> Result<TestResult, StatsError> {
    if orig.len() != pert.len() {
        return Err(StatsError::InvalidInput("paired samples differ in length".into()));
    }
    let n = orig.len();
    if n < 2 {
        return Err(StatsError::InsufficientData(format!("paired t needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = orig.iter().zip(pert).map(|(a, b)| b - a).collect();
    let m = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(StatsError::DegenerateSample("paired differences are constant".into()));
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid df");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TestResult { test: TestKind::PairedT, statistic: t, p_value: p, n })
}

/// Null distribution of the doubled positive-rank sum for the given doubled ranks:
/// entry `k` is the probability that the sum equals `k`.
pub fn wilcoxon_exact_distribution(doubled_ranks: &[usize]) -> Vec<f64> {
    let total: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let scale = 0.5f64.powi(doubled_ranks.len() as i32);
    counts.iter().map(|c| c * scale).collect()
}

/// Two-sided Wilcoxon signed-rank test on paired differences. Zeros are dropped; ties get
/// midranks. Exact null (conditional on the tie pattern) for at most 25 nonzero
/// differences, otherwise a normal approximation with tie correction and no continuity
/// correction. The statistic is the smaller of the two signed-rank sums.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<TestResult, StatsError> {
    let d: Vec<f64> = deltas.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Err(StatsError::DegenerateSample("all differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let t_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let t_minus = total - t_plus;
    let statistic = t_plus.min(t_minus);

    let p = if n <= WILCOXON_EXACT_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let dist = wilcoxon_exact_distribution(&doubled);
        let k = (2.0 * t_plus).round() as usize;
        let lower: f64 = dist[..=k].iter().sum();
        let upper: f64 = dist[k..].iter().sum();
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = (t_plus - mean) / var.sqrt();
        (2.0 * std_normal().sf(z.abs())).min(1.0)
    };
    Ok(TestResult { test: TestKind::Wilcoxon, statistic, p_value: p, n })
}

/// Kruskal–Wallis H with tie correction; p from chi-square with `k - 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::InsufficientData("Kruskal-Wallis needs at least 2 groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(StatsError::InsufficientData(format!("group of size {}", g.len())));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let nn = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let tie_sum: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let correction = 1.0 - tie_sum / (nn * nn * nn - nn);
    if correction <= 0.0 {
        return Ok(TestResult { test: TestKind::KruskalWallis, statistic: 0.0, p_value: 1.0, n: pooled.len() });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (nn * (nn + 1.0))) * sum - 3.0 * (nn + 1.0)) / correction;
    let h = h.max(0.0);
    let chi = ChiSquared::new((groups.len() - 1) as f64).expect("df >= 1");
    Ok(TestResult { test: TestKind::KruskalWallis, statistic: h, p_value: chi.sf(h), n: pooled.len() })
}

/// Two-sided Mann–Whitney U (normal approximation, tie-corrected, no continuity correction).
/// The statistic is U for the first sample.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::InsufficientData("Mann-Whitney needs two nonempty samples".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let nn = n1 + n2;
    let tie_sum: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_sum / (nn * (nn - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (u1 - n1 * n2 / 2.0) / var.sqrt();
        (2.0 * std_normal().sf(z.abs())).min(1.0)
    };
    Ok(TestResult { test: TestKind::MannWhitney, statistic: u1, p_value: p, n: pooled.len() })
}

/// Holm step-down adjustment, monotone in the sorted order and capped at 1. NaN entries are
/// passed through and do not count toward the family size.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..p.len()).filter(|&i| !p[i].is_nan()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let m = idx.len();
    let mut out = p.to_vec();
    let mut running: f64 = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        let adj = ((m - rank) as f64 * p[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilcoxon_small_cases() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        let r = wilcoxon_signed_rank(&[1.0, -1.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(wilcoxon_signed_rank(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_adjust(&[0.2]), vec![0.2]);
        let h = holm_adjust(&[0.01, 0.04]);
        assert!((h[0] - 0.02).abs() < 1e-15 && (h[1] - 0.04).abs() < 1e-15);
        let h = holm_adjust(&[0.01, 0.011, 0.5]);
        assert!((h[0] - 0.03).abs() < 1e-15);
        assert!((h[1] - 0.03).abs() < 1e-15);
        assert!((h[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kw_identical_groups() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let r = kruskal_wallis(&g).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let tied = vec![vec![5.0, 5.0], vec![5.0, 5.0]];
        assert_eq!(kruskal_wallis(&tied).unwrap().p_value, 1.0);
    }

    #[test]
    fn kw_separated_groups() {
        let g = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![5.0, 6.0, 7.0, 8.0],
            vec![9.0, 10.0, 11.0, 12.0],
        ];
        // Rank sums 10, 26, 42: 12/(12*13) * (100+676+1764)/4 - 39 = 9.846153...
        let r = kruskal_wallis(&g).unwrap();
        assert!((r.statistic - 128.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn paired_t_sign() {
        let o = [1.0, 2.0, 3.0, 4.0];
        let p = [1.5, 2.4, 3.7, 4.3];
        let r = paired_t(&o, &p).unwrap();
        assert!(r.statistic > 0.0 && r.p_value < 0.05);
    }
}
