//! Projection of modifier embeddings onto a positive-minus-negative valence direction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ScoreError, Scorer};
use crate::stats::spearman;

pub const POSITIVE_POLE: [&str; 5] = ["good", "nice", "great", "beautiful", "excellent"];
pub const NEGATIVE_POLE: [&str; 5] = ["bad", "ugly", "terrible", "awful", "poor"];

const MIN_MODIFIERS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValenceError {
    #[error("valence direction is degenerate (norm {0:.3e})")]
    DegenerateDirection(f64),
    #[error("need at least {MIN_MODIFIERS} modifiers, got {0}")]
    InsufficientData(usize),
    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("embedding dimensions differ")]
    DimensionMismatch,
    #[error("empty pole word list")]
    EmptyPole,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValenceReport {
    /// Unit valence direction.
    pub direction: Vec<f64>,
    /// Projection of each modifier's normalized embedding onto the direction.
    pub projections: BTreeMap<String, f64>,
    /// Rank correlation between projections and shifts, over modifiers present in both.
    pub spearman_rho: f64,
    pub n: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn pole_mean(
    words: &[&str],
    embeds: &BTreeMap<String, Vec<f64>>,
    dim: usize,
) -> Result<Vec<f64>, ValenceError> {
    if words.is_empty() {
        return Err(ValenceError::EmptyPole);
    }
    let mut acc = vec![0.0; dim];
    for w in words {
        let e = embeds.get(*w).ok_or_else(|| ValenceError::MissingEmbedding(w.to_string()))?;
        if e.len() != dim {
            return Err(ValenceError::DimensionMismatch);
        }
        for (a, x) in acc.iter_mut().zip(normalized(e)) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= words.len() as f64);
    Ok(acc)
}

/// `embeds` must hold every pole word and every modifier in `shifts`.
pub fn valence_analysis(
    shifts: &BTreeMap<String, f64>,
    embeds: &BTreeMap<String, Vec<f64>>,
    pos_words: &[&str],
    neg_words: &[&str],
) -> Result<ValenceReport, ValenceError> {
    if shifts.len() < MIN_MODIFIERS {
        return Err(ValenceError::InsufficientData(shifts.len()));
    }
    let dim = embeds.values().next().map(Vec::len).ok_or(ValenceError::InsufficientData(0))?;
    let pos = pole_mean(pos_words, embeds, dim)?;
    let neg = pole_mean(neg_words, embeds, dim)?;
    let diff: Vec<f64> = pos.iter().zip(&neg).map(|(p, n)| p - n).collect();
    let len = norm(&diff);
    if len < 1e-9 {
        return Err(ValenceError::DegenerateDirection(len));
    }
    let direction: Vec<f64> = diff.iter().map(|d| d / len).collect();
    let mut projections = BTreeMap::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (m, &shift) in shifts {
        let e = embeds.get(m).ok_or_else(|| ValenceError::MissingEmbedding(m.clone()))?;
        if e.len() != dim {
            return Err(ValenceError::DimensionMismatch);
        }
        let s: f64 = normalized(e).iter().zip(&direction).map(|(a, b)| a * b).sum();
        projections.insert(m.clone(), s);
        xs.push(s);
        ys.push(shift);
    }
    let spearman_rho = spearman(&xs, &ys).unwrap_or(f64::NAN);
    Ok(ValenceReport { direction, projections, spearman_rho, n: xs.len() })
}

/// Embeds the pole words and the modifiers through `scorer`.
pub fn embed_words<'a>(
    scorer: &dyn Scorer,
    words: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeMap<String, Vec<f64>>, ValenceError> {
    let mut out = BTreeMap::new();
    for w in words {
        if !out.contains_key(w) {
            out.insert(w.to_string(), scorer.embed_text(w)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        rows.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn monotone_construction_gives_rho_one() {
        let shifts: BTreeMap<String, f64> =
            [("a", -7.0), ("b", -2.0), ("c", 1.2), ("d", 4.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        // Angle on the (valence, other) circle increasing with shift.
        let mut rows = vec![("good", vec![1.0, 0.0]), ("bad", vec![-1.0, 0.0])];
        for (k, s) in &shifts {
            let theta = std::f64::consts::FRAC_PI_2 * (1.0 - s / 10.0);
            rows.push((k.as_str(), vec![theta.cos(), theta.sin()]));
        }
        let r = valence_analysis(&shifts, &table(&rows), &["good"], &["bad"]).unwrap();
        assert!((r.spearman_rho - 1.0).abs() < 1e-12);
        assert_eq!(r.direction, vec![1.0, 0.0]);
    }

    #[test]
    fn same_poles_are_degenerate() {
        let shifts: BTreeMap<String, f64> = ["x", "y", "z"].iter().map(|k| (k.to_string(), 1.0)).collect();
        let e = table(&[("good", vec![1.0, 0.0]), ("x", vec![0.0, 1.0]), ("y", vec![1.0, 1.0]), ("z", vec![1.0, 2.0])]);
        assert!(matches!(
            valence_analysis(&shifts, &e, &["good"], &["good"]),
            Err(ValenceError::DegenerateDirection(_))
        ));
        let two: BTreeMap<String, f64> = shifts.into_iter().take(2).collect();
        assert!(matches!(valence_analysis(&two, &e, &["good"], &["good"]), Err(ValenceError::InsufficientData(2))));
    }
}
