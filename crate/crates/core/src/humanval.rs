//! Human validation: majority votes, Fleiss' κ, robustness refilters of the audit and
//! pairwise preference accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::AuditRng;
use crate::stats::pipeline::{paired_pipeline, CellInput, PipelineParams, ReportCell};
use crate::stats::{bca_ci, mean};

pub const RATERS: usize = 3;
/// Score differences below this count as a scorer tie.
pub const SCORER_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HumanValError {
    #[error("expected {RATERS} labels, got {0}")]
    Arity(usize),
    #[error("agreement undefined: every label falls in one category")]
    DegenerateAgreement,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("annotation line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correctness {
    Incorrect,
    PartiallyCorrect,
    FullyCorrect,
}

impl Correctness {
    pub const ALL: [Correctness; 3] =
        [Correctness::Incorrect, Correctness::PartiallyCorrect, Correctness::FullyCorrect];

    pub fn acceptable(self) -> bool {
        self != Correctness::Incorrect
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
    Tie,
}

impl Preference {
    pub const ALL: [Preference; 3] = [Preference::A, Preference::B, Preference::Tie];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Majority {
    Acceptable,
    Unacceptable,
    NoMajority,
}

/// Three annotators' judgments of one item's two versions. Version A is the original, B the
/// variant named by `variant_key`; without a key the annotation covers every variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_key: Option<String>,
    pub version_a_labels: Vec<Correctness>,
    pub version_b_labels: Vec<Correctness>,
    pub preference_labels: Vec<Preference>,
}

impl AnnotationItem {
    pub fn validate(&self) -> Result<(), HumanValError> {
        for n in [self.version_a_labels.len(), self.version_b_labels.len(), self.preference_labels.len()] {
            if n != RATERS {
                return Err(HumanValError::Arity(n));
            }
        }
        Ok(())
    }

    pub fn one_sided(&self) -> Result<bool, HumanValError> {
        let a = majority_acceptability(&self.version_a_labels)? == Majority::Acceptable;
        let b = majority_acceptability(&self.version_b_labels)? == Majority::Acceptable;
        Ok(a != b)
    }

    /// Either version's majority raw label is partially correct.
    pub fn majority_partial(&self) -> Result<bool, HumanValError> {
        Ok(majority_label(&self.version_a_labels)? == Some(Correctness::PartiallyCorrect)
            || majority_label(&self.version_b_labels)? == Some(Correctness::PartiallyCorrect))
    }
}

fn check_arity<T>(labels: &[T]) -> Result<(), HumanValError> {
    if labels.len() != RATERS {
        return Err(HumanValError::Arity(labels.len()));
    }
    Ok(())
}

fn plurality<T: Copy + Ord>(labels: &[T]) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    counts.into_iter().find(|&(_, c)| 2 * c > labels.len()).map(|(l, _)| l)
}

/// Partially and fully correct both count as acceptable; at least two of three decide.
pub fn majority_acceptability(labels: &[Correctness]) -> Result<Majority, HumanValError> {
    check_arity(labels)?;
    let yes = labels.iter().filter(|l| l.acceptable()).count();
    Ok(if 2 * yes > RATERS {
        Majority::Acceptable
    } else if 2 * (RATERS - yes) > RATERS {
        Majority::Unacceptable
    } else {
        Majority::NoMajority
    })
}

/// Raw label shared by at least two annotators.
pub fn majority_label(labels: &[Correctness]) -> Result<Option<Correctness>, HumanValError> {
    check_arity(labels)?;
    Ok(plurality(labels))
}

/// `None` when all three preferences differ.
pub fn majority_preference(labels: &[Preference]) -> Result<Option<Preference>, HumanValError> {
    check_arity(labels)?;
    Ok(plurality(labels))
}

/// Fleiss' κ from per-subject category counts; every row must have the same rater total.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64, HumanValError> {
    let n_sub = counts.len();
    if n_sub == 0 {
        return Err(HumanValError::InsufficientData("no subjects".into()));
    }
    let raters: usize = counts[0].iter().sum();
    if raters < 2 || counts.iter().any(|r| r.iter().sum::<usize>() != raters || r.len() != counts[0].len()) {
        return Err(HumanValError::InsufficientData("rows need equal rater counts of at least 2".into()));
    }
    let n = raters as f64;
    let k = counts[0].len();
    let mut p_j = vec![0.0; k];
    let mut p_bar = 0.0;
    for row in counts {
        let agree: f64 = row.iter().map(|&c| (c * c) as f64).sum::<f64>() - n;
        p_bar += agree / (n * (n - 1.0));
        for (p, &c) in p_j.iter_mut().zip(row) {
            *p += c as f64;
        }
    }
    p_bar /= n_sub as f64;
    let total = n * n_sub as f64;
    let p_e: f64 = p_j.iter().map(|p| (p / total).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(HumanValError::DegenerateAgreement);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Category counts per subject for labels drawn from `categories`.
pub fn count_matrix<T: PartialEq>(subjects: &[&[T]], categories: &[T]) -> Vec<Vec<usize>> {
    subjects
        .iter()
        .map(|labels| categories.iter().map(|c| labels.iter().filter(|l| *l == c).count()).collect())
        .collect()
}

/// κ on raw correctness labels, one subject per (item, version).
pub fn acceptability_kappa(items: &[AnnotationItem]) -> Result<f64, HumanValError> {
    let subjects: Vec<&[Correctness]> = items
        .iter()
        .flat_map(|i| [i.version_a_labels.as_slice(), i.version_b_labels.as_slice()])
        .collect();
    fleiss_kappa(&count_matrix(&subjects, &Correctness::ALL))
}

/// κ on preferences with Tie as its own category.
pub fn preference_kappa(items: &[AnnotationItem]) -> Result<f64, HumanValError> {
    let subjects: Vec<&[Preference]> = items.iter().map(|i| i.preference_labels.as_slice()).collect();
    fleiss_kappa(&count_matrix(&subjects, &Preference::ALL))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefilterMode {
    /// Items where exactly one version is acceptable.
    DropOneSided,
    /// Items where either version's majority label is partially correct.
    DropPartials,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefilterRow {
    pub scorer: String,
    pub dataset: String,
    pub family: String,
    pub level: String,
    pub n_before: usize,
    pub n_after: usize,
    pub median_before: Option<f64>,
    pub median_after: Option<f64>,
    /// Change in median percent change, percentage points.
    pub median_change: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub direction_preserved: Option<bool>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefilterReport {
    pub mode: RefilterMode,
    pub items_removed: usize,
    pub rows: Vec<RefilterRow>,
    pub max_abs_change: Option<f64>,
    pub all_directions_preserved: bool,
}

/// Item and variant keys selected for removal; a `None` variant removes the whole item.
pub fn flagged(items: &[AnnotationItem], mode: RefilterMode) -> Result<BTreeSet<(String, Option<String>)>, HumanValError> {
    let mut out = BTreeSet::new();
    for a in items {
        let hit = match mode {
            RefilterMode::DropOneSided => a.one_sided()?,
            RefilterMode::DropPartials => a.majority_partial()?,
        };
        if hit {
            out.insert((a.item_id.clone(), a.variant_key.clone()));
        }
    }
    Ok(out)
}

fn cell_key(c: &ReportCell) -> (String, String, String, String) {
    (c.scorer.clone(), c.dataset.clone(), c.family.to_string(), c.level.clone())
}

pub fn refilter_and_recompute(
    inputs: &[CellInput],
    items: &[AnnotationItem],
    mode: RefilterMode,
    params: &PipelineParams,
) -> Result<RefilterReport, HumanValError> {
    let drop = flagged(items, mode)?;
    let removed = |item: &str, level: &str| {
        drop.contains(&(item.to_string(), None)) || drop.contains(&(item.to_string(), Some(level.to_string())))
    };
    let filtered: Vec<CellInput> = inputs
        .iter()
        .map(|c| CellInput {
            obs: c.obs.iter().filter(|o| !removed(&o.item_id, &o.level)).cloned().collect(),
            ..c.clone()
        })
        .collect();
    let before = paired_pipeline(inputs, params);
    let after: BTreeMap<_, ReportCell> = paired_pipeline(&filtered, params).into_iter().map(|c| (cell_key(&c), c)).collect();
    let mut rows = Vec::new();
    for b in &before {
        let a = after.get(&cell_key(b));
        let median_after = a.and_then(|a| a.median);
        let median_change = b.median.zip(median_after).map(|(x, y)| y - x);
        let direction_preserved = b.median.zip(median_after).map(|(x, y)| x.signum() == y.signum() || x == 0.0);
        let note = match (b.median, median_after) {
            (Some(_), None) => Some("insufficient data after refilter".to_string()),
            _ => None,
        };
        rows.push(RefilterRow {
            scorer: b.scorer.clone(),
            dataset: b.dataset.clone(),
            family: b.family.to_string(),
            level: b.level.clone(),
            n_before: b.n,
            n_after: a.map_or(0, |a| a.n),
            median_before: b.median,
            median_after,
            median_change,
            ci_half_width: b.ci_lo.zip(b.ci_hi).map(|(lo, hi)| (hi - lo) / 2.0),
            direction_preserved,
            note,
        });
    }
    let max_abs_change = rows.iter().filter_map(|r| r.median_change).map(f64::abs).reduce(f64::max);
    let all_directions_preserved = rows.iter().all(|r| r.direction_preserved != Some(false));
    Ok(RefilterReport { mode, items_removed: drop.len(), rows, max_abs_change, all_directions_preserved })
}

/// One caption pair judged by humans and scored by a scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub human: Preference,
    pub score_a: Option<f64>,
    pub score_b: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceAccuracy {
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    pub n_skipped: usize,
    pub n_resamples: usize,
    pub seed: u64,
}

pub fn predicted_preference(score_a: f64, score_b: f64) -> Preference {
    let d = score_a - score_b;
    if d.abs() < SCORER_TIE_EPS {
        Preference::Tie
    } else if d > 0.0 {
        Preference::A
    } else {
        Preference::B
    }
}

/// 1 when prediction and human agree, 0.5 when exactly one of them is a tie, else 0.
pub fn preference_credit(human: Preference, predicted: Preference) -> f64 {
    if human == predicted {
        1.0
    } else if human == Preference::Tie || predicted == Preference::Tie {
        0.5
    } else {
        0.0
    }
}

pub fn preference_accuracy(
    pairs: &[PreferencePair],
    n_resamples: usize,
    seed: u64,
) -> Result<PreferenceAccuracy, HumanValError> {
    let credits: Vec<f64> = pairs
        .iter()
        .filter_map(|p| Some(preference_credit(p.human, predicted_preference(p.score_a?, p.score_b?))))
        .collect();
    let n_skipped = pairs.len() - credits.len();
    if credits.is_empty() {
        return Err(HumanValError::InsufficientData("no scored preference pairs".into()));
    }
    let accuracy = mean(&credits);
    let (ci_lo, ci_hi) = match bca_ci(&credits, &mean, n_resamples, seed, 0.95) {
        Ok(ci) => (ci.lo, ci.hi),
        Err(_) => (accuracy, accuracy),
    };
    Ok(PreferenceAccuracy { accuracy, ci_lo, ci_hi, n: credits.len(), n_skipped, n_resamples, seed })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationCounts {
    pub items: usize,
    pub both_acceptable: usize,
    pub one_sided: usize,
    pub both_unacceptable: usize,
    pub majority_partial: usize,
    pub preference_a: usize,
    pub preference_b: usize,
    pub preference_tie: usize,
    pub preference_no_majority: usize,
}

pub fn annotation_counts(items: &[AnnotationItem]) -> Result<AnnotationCounts, HumanValError> {
    let mut c = AnnotationCounts { items: items.len(), ..Default::default() };
    for a in items {
        let ok_a = majority_acceptability(&a.version_a_labels)? == Majority::Acceptable;
        let ok_b = majority_acceptability(&a.version_b_labels)? == Majority::Acceptable;
        match (ok_a, ok_b) {
            (true, true) => c.both_acceptable += 1,
            (false, false) => c.both_unacceptable += 1,
            _ => c.one_sided += 1,
        }
        c.majority_partial += usize::from(a.majority_partial()?);
        match majority_preference(&a.preference_labels)? {
            Some(Preference::A) => c.preference_a += 1,
            Some(Preference::B) => c.preference_b += 1,
            Some(Preference::Tie) => c.preference_tie += 1,
            None => c.preference_no_majority += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanValidationReport {
    /// The annotations came from the synthetic generator, not people.
    pub synthetic: bool,
    pub counts: AnnotationCounts,
    pub kappa_acceptability: Option<f64>,
    pub kappa_preference: Option<f64>,
    pub refilters: Vec<RefilterReport>,
    pub preference_accuracy: BTreeMap<String, PreferenceAccuracy>,
    pub notes: Vec<String>,
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationItem>, HumanValError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: AnnotationItem =
            serde_json::from_str(&line).map_err(|e| HumanValError::Parse { line: i + 1, msg: e.to_string() })?;
        item.validate().map_err(|e| HumanValError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, items: &[AnnotationItem]) -> Result<(), HumanValError> {
    let mut s = String::new();
    for a in items {
        s.push_str(&serde_json::to_string(a).map_err(std::io::Error::other)?);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Marginal rates of the synthetic annotation generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticRates {
    pub both_acceptable: f64,
    pub one_sided: f64,
    pub majority_partial: f64,
    pub preference_tie: f64,
    /// Chance that the third annotator departs from the majority.
    pub dissent: f64,
}

impl Default for SyntheticRates {
    fn default() -> Self {
        Self { both_acceptable: 0.973, one_sided: 0.019, majority_partial: 0.031, preference_tie: 0.966, dissent: 0.2 }
    }
}

fn three<T: Copy>(rng: &mut AuditRng, majority: T, others: &[T], dissent: f64) -> Vec<T> {
    let third = if rng.unit() < dissent { others[rng.below(others.len())] } else { majority };
    let mut v = vec![majority, majority, third];
    let pos = rng.below(RATERS);
    v.swap(pos, 2);
    v
}

/// Synthetic annotations (not human data) for the given (item, variant) keys.
pub fn synthetic_annotations(
    keys: &[(String, Option<String>)],
    rates: &SyntheticRates,
    seed: u64,
) -> Vec<AnnotationItem> {
    use Correctness::*;
    keys.iter()
        .map(|(item, variant)| {
            let mut rng = AuditRng::keyed(seed, &format!("annotation|{item}|{variant:?}"));
            let u = rng.unit();
            let (ok_a, ok_b) = if u < rates.both_acceptable {
                (true, true)
            } else if u < rates.both_acceptable + rates.one_sided {
                if rng.unit() < 0.5 { (true, false) } else { (false, true) }
            } else {
                (false, false)
            };
            let partial = rng.unit() < rates.majority_partial;
            let partial_on_a = rng.unit() < 0.5;
            let mut labels = |ok: bool, is_a: bool| {
                if !ok {
                    return three(&mut rng, Incorrect, &[PartiallyCorrect, FullyCorrect], rates.dissent);
                }
                // Put the partial majority on an acceptable version.
                let wants_partial = partial && (is_a == partial_on_a || !(if is_a { ok_b } else { ok_a }));
                if wants_partial {
                    three(&mut rng, PartiallyCorrect, &[FullyCorrect, Incorrect], rates.dissent)
                } else {
                    three(&mut rng, FullyCorrect, &[PartiallyCorrect, Incorrect], rates.dissent)
                }
            };
            let version_a_labels = labels(ok_a, true);
            let version_b_labels = labels(ok_b, false);
            let pref = if rng.unit() < rates.preference_tie {
                Preference::Tie
            } else if rng.unit() < 0.5 {
                Preference::A
            } else {
                Preference::B
            };
            let others: Vec<Preference> = Preference::ALL.into_iter().filter(|p| *p != pref).collect();
            let preference_labels = three(&mut rng, pref, &others, rates.dissent);
            AnnotationItem {
                item_id: item.clone(),
                variant_key: variant.clone(),
                version_a_labels,
                version_b_labels,
                preference_labels,
            }
        })
        .collect()
}
