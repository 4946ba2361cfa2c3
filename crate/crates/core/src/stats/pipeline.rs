//! Per-cell paired analysis and multi-level factor tests.
//!
//! A cell is one (scorer, dataset, family) combination, optionally narrowed to one level of
//! the family (an anchor, an angle, a modifier). Each observation is one (item, transform)
//! pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    bca_ci, cliffs_delta, holm_adjust, kruskal_wallis, mann_whitney_u, median, paired_t,
    pct_delta, shapiro_wilk, wilcoxon_signed_rank, StatsError, TestKind,
};
use crate::table::{Contrast, ContrastFamily, ScoreTable};

/// Level label of rows pooling every transform of a family.
pub const ALL_LEVELS: &str = "all";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedObs {
    pub item_id: String,
    pub level: String,
    pub size_bin: String,
    pub category: String,
    pub s_ref: f64,
    pub s_pert: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellInput {
    pub scorer_id: String,
    pub dataset: String,
    pub family: ContrastFamily,
    pub obs: Vec<PairedObs>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub n_resamples: usize,
    pub seed: u64,
    pub confidence: f64,
    /// Shapiro–Wilk p above which a sample counts as approximately normal.
    pub normality_alpha: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self { n_resamples: 10_000, seed: 2025, confidence: 0.95, normality_alpha: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub scorer: String,
    pub dataset: String,
    pub family: ContrastFamily,
    pub level: String,
    pub n: usize,
    /// Pairs dropped because the reference score was too close to zero.
    pub n_excluded: usize,
    pub median: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub sw_p_ref: Option<f64>,
    pub sw_p_pert: Option<f64>,
    pub test: Option<TestKind>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub p_holm: Option<f64>,
    pub cliffs_delta: Option<f64>,
    /// Mixed-effects slope; not estimated.
    pub beta1: String,
    pub notes: Vec<String>,
}

impl ReportCell {
    fn empty(input: &CellInput, level: &str) -> Self {
        Self {
            scorer: input.scorer_id.clone(),
            dataset: input.dataset.clone(),
            family: input.family,
            level: level.to_string(),
            n: 0,
            n_excluded: 0,
            median: None,
            ci_lo: None,
            ci_hi: None,
            sw_p_ref: None,
            sw_p_pert: None,
            test: None,
            statistic: None,
            p_value: None,
            p_holm: None,
            cliffs_delta: None,
            beta1: "unavailable".into(),
            notes: Vec::new(),
        }
    }
}

/// Paired analysis of one cell restricted to observations whose level matches `level`
/// (or all of them for [`ALL_LEVELS`]).
pub fn analyze_cell(input: &CellInput, level: &str, params: &PipelineParams) -> ReportCell {
    let mut cell = ReportCell::empty(input, level);
    let mut refs = Vec::new();
    let mut perts = Vec::new();
    let mut pcts = Vec::new();
    for o in input.obs.iter().filter(|o| level == ALL_LEVELS || o.level == level) {
        match pct_delta(o.s_ref, o.s_pert) {
            Ok(p) => {
                refs.push(o.s_ref);
                perts.push(o.s_pert);
                pcts.push(p);
            }
            Err(_) => cell.n_excluded += 1,
        }
    }
    cell.n = pcts.len();
    if cell.n_excluded > 0 {
        cell.notes.push(format!("{} pairs excluded: degenerate reference score", cell.n_excluded));
    }
    match bca_ci(&pcts, &median, params.n_resamples, params.seed, params.confidence) {
        Ok(ci) => {
            cell.median = Some(ci.point);
            cell.ci_lo = Some(ci.lo);
            cell.ci_hi = Some(ci.hi);
        }
        Err(e) => {
            cell.notes.push(e.to_string());
            return cell;
        }
    }
    cell.cliffs_delta = cliffs_delta(&perts, &refs).ok();

    let sw = |x: &[f64]| shapiro_wilk(x).map(|r| r.p_value);
    let sw_ref = sw(&refs);
    let sw_pert = sw(&perts);
    cell.sw_p_ref = sw_ref.as_ref().ok().copied();
    cell.sw_p_pert = sw_pert.as_ref().ok().copied();
    let normal = matches!((&sw_ref, &sw_pert), (Ok(a), Ok(b)) if *a > params.normality_alpha && *b > params.normality_alpha);
    let outcome = if normal {
        paired_t(&refs, &perts)
    } else {
        let diffs: Vec<f64> = refs.iter().zip(&perts).map(|(a, b)| b - a).collect();
        wilcoxon_signed_rank(&diffs)
    };
    match outcome {
        Ok(t) => {
            cell.test = Some(t.test);
            cell.statistic = Some(t.statistic);
            cell.p_value = Some(t.p_value);
        }
        Err(e) => cell.notes.push(e.to_string()),
    }
    cell
}

fn distinct_levels(input: &CellInput) -> Vec<String> {
    let mut v: Vec<String> = input.obs.iter().map(|o| o.level.clone()).collect();
    v.sort();
    v.dedup();
    v
}

/// Pooled family rows (Holm across families within scorer × dataset) followed by per-level
/// rows for multi-level families (Holm across levels within the family).
pub fn paired_pipeline(inputs: &[CellInput], params: &PipelineParams) -> Vec<ReportCell> {
    let mut family_rows: Vec<ReportCell> =
        inputs.iter().map(|c| analyze_cell(c, ALL_LEVELS, params)).collect();
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in family_rows.iter().enumerate() {
        groups.entry((r.scorer.clone(), r.dataset.clone())).or_default().push(i);
    }
    for idx in groups.values() {
        apply_holm(&mut family_rows, idx);
    }

    let mut out = Vec::new();
    for (input, row) in inputs.iter().zip(family_rows) {
        out.push(row);
        let levels = distinct_levels(input);
        if levels.len() > 1 {
            let mut level_rows: Vec<ReportCell> =
                levels.iter().map(|l| analyze_cell(input, l, params)).collect();
            let idx: Vec<usize> = (0..level_rows.len()).collect();
            apply_holm(&mut level_rows, &idx);
            out.extend(level_rows);
        }
    }
    out
}

fn apply_holm(rows: &mut [ReportCell], idx: &[usize]) {
    let p: Vec<f64> = idx.iter().map(|&i| rows[i].p_value.unwrap_or(f64::NAN)).collect();
    let adj = holm_adjust(&p);
    for (&i, a) in idx.iter().zip(adj) {
        rows[i].p_holm = (!a.is_nan()).then_some(a);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub u: f64,
    pub p_value: f64,
    pub p_holm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorTest {
    pub scorer: String,
    pub dataset: String,
    pub family: ContrastFamily,
    pub factor: String,
    pub groups: Vec<String>,
    pub h: Option<f64>,
    pub df: usize,
    pub p_value: Option<f64>,
    pub pairwise: Vec<PairwiseTest>,
    pub note: Option<String>,
}

/// Kruskal–Wallis over %Δ grouped by size bin, category and (for multi-level families)
/// level, each followed by Holm-adjusted pairwise Mann–Whitney tests. Groups with fewer
/// than two observations are left out.
pub fn factor_tests(inputs: &[CellInput]) -> Vec<FactorTest> {
    let mut out = Vec::new();
    for input in inputs {
        let factors: [(&str, fn(&PairedObs) -> &str); 3] = [
            ("size_bin", |o| o.size_bin.as_str()),
            ("category", |o| o.category.as_str()),
            ("level", |o| o.level.as_str()),
        ];
        for (name, key) in factors {
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for o in &input.obs {
                if let Ok(p) = pct_delta(o.s_ref, o.s_pert) {
                    groups.entry(key(o).to_string()).or_default().push(p);
                }
            }
            if name == "level" && groups.len() < 2 {
                continue;
            }
            groups.retain(|_, v| v.len() >= 2);
            let labels: Vec<String> = groups.keys().cloned().collect();
            let values: Vec<Vec<f64>> = groups.into_values().collect();
            let mut ft = FactorTest {
                scorer: input.scorer_id.clone(),
                dataset: input.dataset.clone(),
                family: input.family,
                factor: name.to_string(),
                groups: labels.clone(),
                h: None,
                df: labels.len().saturating_sub(1),
                p_value: None,
                pairwise: Vec::new(),
                note: None,
            };
            match kruskal_wallis(&values) {
                Ok(r) => {
                    ft.h = Some(r.statistic);
                    ft.p_value = Some(r.p_value);
                    let mut pw = Vec::new();
                    for i in 0..values.len() {
                        for j in (i + 1)..values.len() {
                            if let Ok(m) = mann_whitney_u(&values[i], &values[j]) {
                                pw.push(PairwiseTest {
                                    a: labels[i].clone(),
                                    b: labels[j].clone(),
                                    u: m.statistic,
                                    p_value: m.p_value,
                                    p_holm: f64::NAN,
                                });
                            }
                        }
                    }
                    let adj = holm_adjust(&pw.iter().map(|p| p.p_value).collect::<Vec<_>>());
                    for (p, a) in pw.iter_mut().zip(adj) {
                        p.p_holm = a;
                    }
                    ft.pairwise = pw;
                }
                Err(StatsError::InsufficientData(m)) => ft.note = Some(m),
                Err(e) => ft.note = Some(e.to_string()),
            }
            out.push(ft);
        }
    }
    out
}

/// Per-item metadata used to stratify observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemFactors {
    pub dataset: String,
    pub size_bin: String,
    pub category: String,
}

/// Gathers one cell per (dataset, family) from a score table. Contrasts missing either
/// side are skipped.
pub fn build_cells(
    table: &ScoreTable,
    items: &BTreeMap<String, (ItemFactors, Vec<Contrast>)>,
) -> Vec<CellInput> {
    let mut cells: BTreeMap<(String, ContrastFamily), Vec<PairedObs>> = BTreeMap::new();
    for (item_id, (factors, contrasts)) in items {
        for c in contrasts {
            if let Some((s_ref, s_pert)) = table.pair(item_id, c) {
                cells.entry((factors.dataset.clone(), c.family)).or_default().push(PairedObs {
                    item_id: item_id.clone(),
                    level: c.level.clone(),
                    size_bin: factors.size_bin.clone(),
                    category: factors.category.clone(),
                    s_ref,
                    s_pert,
                });
            }
        }
    }
    cells
        .into_iter()
        .map(|((dataset, family), obs)| CellInput {
            scorer_id: table.scorer_id.clone(),
            dataset,
            family,
            obs,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(obs: Vec<(f64, f64)>) -> CellInput {
        CellInput {
            scorer_id: "m".into(),
            dataset: "d".into(),
            family: ContrastFamily::VerticalFlip,
            obs: obs
                .into_iter()
                .enumerate()
                .map(|(i, (r, p))| PairedObs {
                    item_id: format!("i{i}"),
                    level: "vertical_flip".into(),
                    size_bin: "0-10".into(),
                    category: "furniture".into(),
                    s_ref: r,
                    s_pert: p,
                })
                .collect(),
        }
    }

    #[test]
    fn two_items_is_insufficient() {
        let c = cell(vec![(0.5, 0.52), (0.6, 0.61)]);
        let r = analyze_cell(&c, ALL_LEVELS, &PipelineParams { n_resamples: 200, ..Default::default() });
        assert_eq!(r.median, None);
        assert!(r.notes[0].contains("insufficient"));
    }

    #[test]
    fn zero_shift_cell() {
        let c = cell((0..20).map(|i| (0.4 + i as f64 * 0.01, 0.4 + i as f64 * 0.01)).collect());
        let r = analyze_cell(&c, ALL_LEVELS, &PipelineParams { n_resamples: 500, ..Default::default() });
        assert_eq!((r.median, r.ci_lo, r.ci_hi), (Some(0.0), Some(0.0), Some(0.0)));
        assert_eq!(r.test, None);
        assert_eq!(r.p_holm, None);
    }
}
