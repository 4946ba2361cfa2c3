//! Invariance-calibrated scoring.
//!
//! An item's sensitivity on an axis is the median absolute score change over its contrasts
//! on that axis. The calibrated score of a pair subtracts `λ·w_T·Δ_T(item)` for every axis
//! `T` the pair was exposed to, i.e. for which it is the perturbed side of a contrast.
//! Canonical pairs (original image with base or neutral caption) are left unchanged. λ is
//! picked on a dev split: the smallest grid value minimizing the summed per-axis median
//! sensitivity, among values that keep the Spearman correlation with every reference scorer
//! within ε of its uncalibrated value.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::label_hash;
use crate::rrf::{gap_sweep, RrfError, RrfParams};
use crate::stats::{median, pct_delta, spearman};
use crate::table::{Axis, Contrast, ContrastFamily, PairKey, ScoreTable};

pub const MIN_DEV_ITEMS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("no scored transforms for item {item} in {family}")]
    MissingVariants { item: String, family: String },
    #[error("need at least {MIN_DEV_ITEMS} dev items with reference scores, got {0}")]
    InsufficientData(usize),
    #[error("invalid calibration config: {0}")]
    Config(String),
    #[error(transparent)]
    Rrf(#[from] RrfError),
}

/// Contrasts of each item, keyed by item id.
pub type ItemContrasts = BTreeMap<String, Vec<Contrast>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Uniform,
    Proportional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub lambda_grid: Vec<f64>,
    pub weight_mode: WeightMode,
    /// Explicit weights override `weight_mode`.
    pub weights: Option<BTreeMap<Axis, f64>>,
    pub epsilon: f64,
    pub dev_fraction: f64,
    pub split_seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            lambda_grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            weight_mode: WeightMode::Uniform,
            weights: None,
            epsilon: 0.01,
            dev_fraction: 0.5,
            split_seed: 2025,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        let g = &self.lambda_grid;
        if g.first() != Some(&0.0) {
            return Err(CalibError::Config("lambda_grid must start at 0".into()));
        }
        if g.windows(2).any(|w| !(w[0] < w[1])) || g.iter().any(|l| !l.is_finite()) {
            return Err(CalibError::Config("lambda_grid must be finite and strictly ascending".into()));
        }
        if let Some(w) = &self.weights {
            if w.values().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(CalibError::Config("weights must be finite and nonnegative".into()));
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(CalibError::Config("epsilon must be nonnegative".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(CalibError::Config("dev_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn abs_diffs<'a>(
    table: &ScoreTable,
    item: &str,
    contrasts: impl IntoIterator<Item = &'a Contrast>,
) -> Vec<f64> {
    contrasts
        .into_iter()
        .filter_map(|c| table.pair(item, c))
        .map(|(r, p)| (p - r).abs())
        .collect()
}

/// Median absolute score change over the given contrasts of one item.
pub fn sensitivity(table: &ScoreTable, item: &str, contrasts: &[Contrast]) -> Result<f64, CalibError> {
    let d = abs_diffs(table, item, contrasts);
    if d.is_empty() {
        let family = contrasts.first().map(|c| c.family.to_string()).unwrap_or_default();
        return Err(CalibError::MissingVariants { item: item.to_string(), family });
    }
    Ok(median(&d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub item_id: String,
    pub scorer_id: String,
    pub per_axis: BTreeMap<Axis, f64>,
    pub per_family: BTreeMap<ContrastFamily, f64>,
}

/// Profiles for every item, covering only the axes and families it has scored contrasts for.
pub fn profiles(table: &ScoreTable, contrasts: &ItemContrasts) -> BTreeMap<String, SensitivityProfile> {
    let mut out = BTreeMap::new();
    for (item, cs) in contrasts {
        let mut per_axis = BTreeMap::new();
        for axis in Axis::ALL {
            let d = abs_diffs(table, item, cs.iter().filter(|c| c.axis() == Some(axis)));
            if !d.is_empty() {
                per_axis.insert(axis, median(&d));
            }
        }
        let mut per_family = BTreeMap::new();
        for fam in ContrastFamily::ALL {
            let d = abs_diffs(table, item, cs.iter().filter(|c| c.family == fam));
            if !d.is_empty() {
                per_family.insert(fam, median(&d));
            }
        }
        out.insert(
            item.clone(),
            SensitivityProfile { item_id: item.clone(), scorer_id: table.scorer_id.clone(), per_axis, per_family },
        );
    }
    out
}

/// Per-axis median of the given items' profiles, substituted where an item lacks an axis.
pub fn axis_medians<'a>(profiles: impl IntoIterator<Item = &'a SensitivityProfile>) -> BTreeMap<Axis, f64> {
    let mut by_axis: BTreeMap<Axis, Vec<f64>> = BTreeMap::new();
    for p in profiles {
        for (a, d) in &p.per_axis {
            by_axis.entry(*a).or_default().push(*d);
        }
    }
    by_axis.into_iter().map(|(a, v)| (a, median(&v))).collect()
}

/// `s − λ·Σ_T w_T·Δ_T`; a family absent from `weights` or `profile` contributes nothing.
pub fn calibrated_score<K: Ord>(s: f64, profile: &BTreeMap<K, f64>, lambda: f64, weights: &BTreeMap<K, f64>) -> f64 {
    let total: f64 = profile.iter().map(|(k, d)| weights.get(k).copied().unwrap_or(0.0) * d).sum();
    s - lambda * total
}

/// Uniform: every family 1. Proportional: `w_T ∝ baseline_T`, scaled to sum to the number of
/// families. All-zero baselines fall back to uniform with a warning.
pub fn weight_scheme<K: Ord + Clone>(
    baselines: &BTreeMap<K, f64>,
    mode: WeightMode,
) -> (BTreeMap<K, f64>, Option<String>) {
    let uniform = || baselines.keys().map(|k| (k.clone(), 1.0)).collect();
    match mode {
        WeightMode::Uniform => (uniform(), None),
        WeightMode::Proportional => {
            let total: f64 = baselines.values().sum();
            if !(total > 0.0) {
                return (uniform(), Some("all baseline sensitivities are zero; using uniform weights".into()));
            }
            let k = baselines.len() as f64;
            (baselines.iter().map(|(key, b)| (key.clone(), k * b / total)).collect(), None)
        }
    }
}

/// Axes each pair of an item is the perturbed side of.
fn exposure(contrasts: &[Contrast]) -> BTreeMap<&PairKey, BTreeSet<Axis>> {
    let mut out: BTreeMap<&PairKey, BTreeSet<Axis>> = BTreeMap::new();
    for c in contrasts {
        if let Some(a) = c.axis() {
            out.entry(&c.perturbed).or_default().insert(a);
        }
    }
    out
}

/// Calibrated copy of `table` over the items in `contrasts`. Items missing an axis use
/// `fallback` for it.
pub fn apply_calibration(
    table: &ScoreTable,
    contrasts: &ItemContrasts,
    profiles: &BTreeMap<String, SensitivityProfile>,
    fallback: &BTreeMap<Axis, f64>,
    lambda: f64,
    weights: &BTreeMap<Axis, f64>,
) -> ScoreTable {
    let exposures: BTreeMap<&str, BTreeMap<&PairKey, BTreeSet<Axis>>> =
        contrasts.iter().map(|(i, cs)| (i.as_str(), exposure(cs))).collect();
    table.map(|item, key, s| {
        let Some(axes) = exposures.get(item).and_then(|e| e.get(key)) else { return s };
        let own = profiles.get(item).map(|p| &p.per_axis);
        let profile: BTreeMap<Axis, f64> = axes
            .iter()
            .filter_map(|a| own.and_then(|p| p.get(a)).or_else(|| fallback.get(a)).map(|d| (*a, *d)))
            .collect();
        calibrated_score(s, &profile, lambda, weights)
    })
}

/// Per-axis median over items of the item's median absolute change, for the given items.
pub fn axis_sensitivity(
    table: &ScoreTable,
    contrasts: &ItemContrasts,
    items: &BTreeSet<String>,
) -> BTreeMap<Axis, f64> {
    let mut by_axis: BTreeMap<Axis, Vec<f64>> = BTreeMap::new();
    for (item, cs) in contrasts.iter().filter(|(i, _)| items.contains(*i)) {
        for axis in Axis::ALL {
            let d = abs_diffs(table, item, cs.iter().filter(|c| c.axis() == Some(axis)));
            if !d.is_empty() {
                by_axis.entry(axis).or_default().push(median(&d));
            }
        }
    }
    by_axis.into_iter().map(|(a, v)| (a, median(&v))).collect()
}

/// Spearman correlation over the pairs of `items` scored by both tables.
pub fn pooled_spearman(a: &ScoreTable, b: &ScoreTable, items: &BTreeSet<String>) -> Option<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (item, key, s) in a.iter() {
        if items.contains(item) {
            if let Some(h) = b.get(item, key) {
                x.push(s);
                y.push(h);
            }
        }
    }
    spearman(&x, &y).ok()
}

/// Items assigned to the dev split by a seeded hash of their id.
pub fn dev_split<'a>(items: impl IntoIterator<Item = &'a String>, fraction: f64, seed: u64) -> BTreeSet<String> {
    items
        .into_iter()
        .filter(|i| (label_hash(&format!("split|{seed}|{i}")) as f64 / u64::MAX as f64) < fraction)
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub objective: f64,
    pub per_axis: BTreeMap<Axis, f64>,
    /// Spearman with each reference scorer on the dev split.
    pub reference_corr: BTreeMap<String, f64>,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub lambda: f64,
    pub grid: Vec<GridPoint>,
    pub warnings: Vec<String>,
}

/// Everything the calibration needs about one scorer.
pub struct CalibrationInput<'a> {
    pub table: &'a ScoreTable,
    pub contrasts: &'a ItemContrasts,
    pub references: &'a [ScoreTable],
    pub dev: &'a BTreeSet<String>,
}

impl CalibrationInput<'_> {
    fn profiles_and_fallback(&self) -> (BTreeMap<String, SensitivityProfile>, BTreeMap<Axis, f64>) {
        let profiles = profiles(self.table, self.contrasts);
        let fallback = axis_medians(profiles.iter().filter(|(i, _)| self.dev.contains(*i)).map(|(_, p)| p));
        (profiles, fallback)
    }
}

/// The audited table calibrated at `lambda`, with profiles over all items and the dev-split
/// fallback.
pub fn calibrated_table(input: &CalibrationInput, lambda: f64, weights: &BTreeMap<Axis, f64>) -> ScoreTable {
    let (profiles, fallback) = input.profiles_and_fallback();
    apply_calibration(input.table, input.contrasts, &profiles, &fallback, lambda, weights)
}

/// Weights from the config, or from dev-split baselines per the weight mode.
pub fn resolve_weights(
    cfg: &CalibrationConfig,
    input: &CalibrationInput,
) -> (BTreeMap<Axis, f64>, Option<String>) {
    if let Some(w) = &cfg.weights {
        return (w.clone(), None);
    }
    let baselines = axis_sensitivity(input.table, input.contrasts, input.dev);
    weight_scheme(&baselines, cfg.weight_mode)
}

pub fn select_lambda(
    cfg: &CalibrationConfig,
    input: &CalibrationInput,
    weights: &BTreeMap<Axis, f64>,
) -> Result<Selection, CalibError> {
    cfg.validate()?;
    let dev_with_refs = input
        .dev
        .iter()
        .filter(|i| input.references.iter().all(|r| r.item_ids().binary_search(i).is_ok()))
        .count();
    if dev_with_refs < MIN_DEV_ITEMS {
        return Err(CalibError::InsufficientData(dev_with_refs));
    }
    let (profiles, fallback) = input.profiles_and_fallback();
    let base_corr: Vec<Option<f64>> =
        input.references.iter().map(|r| pooled_spearman(input.table, r, input.dev)).collect();

    let grid: Vec<GridPoint> = cfg
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let cal = apply_calibration(input.table, input.contrasts, &profiles, &fallback, lambda, weights);
            let per_axis = axis_sensitivity(&cal, input.contrasts, input.dev);
            let objective = per_axis.values().sum();
            let mut reference_corr = BTreeMap::new();
            let mut feasible = true;
            for (r, base) in input.references.iter().zip(&base_corr) {
                let rho = pooled_spearman(&cal, r, input.dev);
                if let Some(rho) = rho {
                    reference_corr.insert(r.scorer_id.clone(), rho);
                }
                feasible &= match (rho, base) {
                    (Some(rho), Some(base)) => rho >= base - cfg.epsilon,
                    _ => lambda == 0.0,
                };
            }
            GridPoint { lambda, objective, per_axis, reference_corr, feasible }
        })
        .collect();

    let mut best: Option<&GridPoint> = None;
    for g in grid.iter().filter(|g| g.feasible) {
        if best.is_none_or(|b| g.objective < b.objective) {
            best = Some(g);
        }
    }
    let lambda = best.map_or(0.0, |b| b.lambda);
    let mut warnings = Vec::new();
    if !grid.iter().any(|g| g.feasible && g.lambda > 0.0) {
        warnings.push(format!("no feasible lambda above 0 within epsilon {}; using 0", cfg.epsilon));
    }
    Ok(Selection { lambda, grid, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRow {
    pub axis: Axis,
    /// Median over items of the item's median absolute change, raw units.
    pub before: f64,
    pub after: f64,
    /// Same, with changes in percent of the reference score.
    pub before_pct: f64,
    pub after_pct: f64,
    pub reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub family: ContrastFamily,
    /// Median absolute percent change over items and modifiers.
    pub before_pct: f64,
    pub after_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrfRow {
    pub family: ContrastFamily,
    pub d_pct: f64,
    pub before: f64,
    pub after: f64,
    pub before_ci: (f64, f64),
    pub after_ci: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrRow {
    pub reference: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub scorer: String,
    pub lambda: f64,
    pub epsilon: f64,
    pub weight_mode: WeightMode,
    pub weights: BTreeMap<Axis, f64>,
    pub n_dev: usize,
    pub n_eval: usize,
    pub axes: Vec<AxisRow>,
    pub fairness: Vec<FairnessRow>,
    pub rrf: Vec<RrfRow>,
    /// Correlation with each reference on the evaluation split.
    pub correlations: Vec<CorrRow>,
    pub grid: Vec<GridPoint>,
    pub warnings: Vec<String>,
}

fn pct_changes<'a>(
    table: &ScoreTable,
    item: &str,
    contrasts: impl IntoIterator<Item = &'a Contrast>,
) -> Vec<f64> {
    contrasts
        .into_iter()
        .filter_map(|c| table.pair(item, c))
        .filter_map(|(r, p)| pct_delta(r, p).ok())
        .collect()
}

fn axis_pct(table: &ScoreTable, contrasts: &ItemContrasts, items: &BTreeSet<String>, axis: Axis) -> f64 {
    let per_item: Vec<f64> = contrasts
        .iter()
        .filter(|(i, _)| items.contains(*i))
        .filter_map(|(i, cs)| {
            let d: Vec<f64> =
                pct_changes(table, i, cs.iter().filter(|c| c.axis() == Some(axis))).iter().map(|x| x.abs()).collect();
            (!d.is_empty()).then(|| median(&d))
        })
        .collect();
    if per_item.is_empty() {
        f64::NAN
    } else {
        median(&per_item)
    }
}

fn family_groups(
    table: &ScoreTable,
    contrasts: &ItemContrasts,
    items: &BTreeSet<String>,
    family: ContrastFamily,
) -> Vec<Vec<f64>> {
    contrasts
        .iter()
        .filter(|(i, _)| items.contains(*i))
        .map(|(i, cs)| {
            cs.iter().filter(|c| c.family == family).filter_map(|c| table.pair(i, c)).map(|(r, p)| p - r).collect()
        })
        .filter(|g: &Vec<f64>| !g.is_empty())
        .collect()
}

/// Selects λ on the dev split and reports before/after on the remaining items.
pub fn calibrate(
    cfg: &CalibrationConfig,
    input: &CalibrationInput,
    rrf_params: &RrfParams,
) -> Result<CalibrationReport, CalibError> {
    let (weights, weight_warning) = resolve_weights(cfg, input);
    let sel = select_lambda(cfg, input, &weights)?;
    let cal = calibrated_table(input, sel.lambda, &weights);
    let eval: BTreeSet<String> = input.contrasts.keys().filter(|i| !input.dev.contains(*i)).cloned().collect();

    let before = axis_sensitivity(input.table, input.contrasts, &eval);
    let after = axis_sensitivity(&cal, input.contrasts, &eval);
    let axes = before
        .iter()
        .map(|(&axis, &b)| {
            let a = after.get(&axis).copied().unwrap_or(f64::NAN);
            AxisRow {
                axis,
                before: b,
                after: a,
                before_pct: axis_pct(input.table, input.contrasts, &eval, axis),
                after_pct: axis_pct(&cal, input.contrasts, &eval, axis),
                reduction_pct: if b > 0.0 { 100.0 * (b - a) / b } else { 0.0 },
            }
        })
        .collect();

    let present: BTreeSet<ContrastFamily> = input.contrasts.values().flatten().map(|c| c.family).collect();
    let fairness = present
        .iter()
        .filter(|f| f.axis() == Some(Axis::Societal))
        .map(|&family| {
            let gap = |t: &ScoreTable| {
                let v: Vec<f64> = eval
                    .iter()
                    .filter_map(|i| input.contrasts.get(i).map(|cs| (i, cs)))
                    .flat_map(|(i, cs)| pct_changes(t, i, cs.iter().filter(|c| c.family == family)))
                    .map(f64::abs)
                    .collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    median(&v)
                }
            };
            FairnessRow { family, before_pct: gap(input.table), after_pct: gap(&cal) }
        })
        .collect();

    let mut rrf = Vec::new();
    for &family in present.iter().filter(|f| f.axis() == Some(Axis::Spatial)) {
        let gb = family_groups(input.table, input.contrasts, &eval, family);
        let ga = family_groups(&cal, input.contrasts, &eval, family);
        if gb.len() < 2 {
            continue;
        }
        let width = input.table.range_width();
        let b = gap_sweep(&input.table.scorer_id, family.as_str(), &gb, width, rrf_params)?;
        let a = gap_sweep(&input.table.scorer_id, family.as_str(), &ga, width, rrf_params)?;
        for (eb, ea) in b.iter().zip(&a) {
            rrf.push(RrfRow {
                family,
                d_pct: eb.d_pct,
                before: eb.rrf,
                after: ea.rrf,
                before_ci: (eb.ci_lo, eb.ci_hi),
                after_ci: (ea.ci_lo, ea.ci_hi),
            });
        }
    }

    let correlations = input
        .references
        .iter()
        .filter_map(|r| {
            let b = pooled_spearman(input.table, r, &eval)?;
            let a = pooled_spearman(&cal, r, &eval)?;
            Some(CorrRow { reference: r.scorer_id.clone(), before: b, after: a, delta: a - b })
        })
        .collect();

    let mut warnings = sel.warnings.clone();
    warnings.extend(weight_warning);
    Ok(CalibrationReport {
        scorer: input.table.scorer_id.clone(),
        lambda: sel.lambda,
        epsilon: cfg.epsilon,
        weight_mode: cfg.weight_mode,
        weights,
        n_dev: input.dev.len(),
        n_eval: eval.len(),
        axes,
        fairness,
        rrf,
        correlations,
        grid: sel.grid,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contrast(level: &str) -> Contrast {
        Contrast {
            family: ContrastFamily::Rotation,
            level: level.into(),
            reference: PairKey::original(),
            perturbed: PairKey::new(level, "base"),
        }
    }

    #[test]
    fn sensitivity_examples() {
        let mut t = ScoreTable::new("m", (0.0, 1.0));
        t.insert("x", PairKey::original(), 0.50);
        t.insert("x", PairKey::new("rotation:+5", "base"), 0.53);
        let one = [contrast("rotation:+5")];
        assert!((sensitivity(&t, "x", &one).unwrap() - 0.03).abs() < 1e-12);
        t.insert("x", PairKey::new("rotation:-5", "base"), 0.45);
        t.insert("x", PairKey::new("rotation:+10", "base"), 0.41);
        let three = [contrast("rotation:+5"), contrast("rotation:-5"), contrast("rotation:+10")];
        // |diffs| {0.03, 0.05, 0.09}
        assert!((sensitivity(&t, "x", &three).unwrap() - 0.05).abs() < 1e-12);
        assert!(matches!(sensitivity(&t, "y", &one), Err(CalibError::MissingVariants { .. })));
    }

    #[test]
    fn calibrated_score_examples() {
        let profile = BTreeMap::from([(Axis::Spatial, 0.04), (Axis::Societal, 0.02)]);
        let w = BTreeMap::from([(Axis::Spatial, 1.0), (Axis::Societal, 1.0)]);
        assert!((calibrated_score(0.60, &profile, 0.5, &w) - 0.57).abs() < 1e-12);
        assert_eq!(calibrated_score(0.6123, &profile, 0.0, &w), 0.6123);
        let zero = BTreeMap::from([(Axis::Spatial, 0.0), (Axis::Societal, 0.0)]);
        assert_eq!(calibrated_score(0.6123, &profile, 0.7, &zero), 0.6123);
    }

    #[test]
    fn weight_examples() {
        let b = BTreeMap::from([("a", 0.06), ("b", 0.02), ("c", 0.02)]);
        let (u, warn) = weight_scheme(&b, WeightMode::Uniform);
        assert!(u.values().all(|&w| w == 1.0) && warn.is_none());
        let (p, _) = weight_scheme(&b, WeightMode::Proportional);
        assert!((p["a"] - 1.8).abs() < 1e-12 && (p["b"] - 0.6).abs() < 1e-12 && (p["c"] - 0.6).abs() < 1e-12);
        let z = BTreeMap::from([("a", 0.0), ("b", 0.0)]);
        let (w, warn) = weight_scheme(&z, WeightMode::Proportional);
        assert!(w.values().all(|&x| x == 1.0) && warn.is_some());
    }

    #[test]
    fn grid_validation() {
        let mut c = CalibrationConfig::default();
        assert_eq!(c.lambda_grid.len(), 21);
        assert!(c.validate().is_ok());
        c.lambda_grid = vec![0.1, 0.2];
        assert!(c.validate().is_err());
    }
}
