//! Cliff's delta and rank correlations.

use serde::{Deserialize, Serialize};

use super::{midranks, StatsError};

/// `(#{a_i > b_j} - #{a_i < b_j}) / (|a| |b|)`, by sorting `b` and binary search.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::InsufficientData("Cliff's delta needs two nonempty samples".into()));
    }
    let mut sb = b.to_vec();
    sb.sort_by(f64::total_cmp);
    let mut greater: i64 = 0;
    let mut less: i64 = 0;
    for &x in a {
        let below = sb.partition_point(|&v| v < x);
        let not_above = sb.partition_point(|&v| v <= x);
        greater += below as i64;
        less += (sb.len() - not_above) as i64;
    }
    Ok((greater - less) as f64 / (a.len() as f64 * b.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankCorrKind {
    Spearman,
    Kendall,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput("samples differ in length".into()));
    }
    if x.len() < 3 {
        return Err(StatsError::InsufficientData(format!("rank correlation needs n >= 3, got {}", x.len())));
    }
    let constant = |v: &[f64]| v.iter().all(|&e| e == v[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::DegenerateSample("constant input".into()));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Pearson correlation of midranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x, y)?;
    let (rx, _) = midranks(x);
    let (ry, _) = midranks(y);
    Ok(pearson(&rx, &ry).clamp(-1.0, 1.0))
}

/// Kendall's tau-b: `(C - D) / sqrt((n0 - n1)(n0 - n2))`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x, y)?;
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tx += 1,
                (_, 0) => ty += 1,
                _ if dx == dy => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let den = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
    Ok(((conc - disc) as f64 / den).clamp(-1.0, 1.0))
}

pub fn rank_corr(x: &[f64], y: &[f64], kind: RankCorrKind) -> Result<f64, StatsError> {
    match kind {
        RankCorrKind::Spearman => spearman(x, y),
        RankCorrKind::Kendall => kendall_tau_b(x, y),
    }
}
