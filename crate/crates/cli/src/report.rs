//! Report bundle writer. Everything under `reports/` is a pure function of the inputs, the
//! configuration and the seed: no timestamps, no absolute paths, no cache state.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use invariaudit_core::humanval::HumanValidationReport;
use invariaudit_core::rrf::RrfEstimate;
use invariaudit_core::stats::pipeline::{ReportCell, ALL_LEVELS};
use serde::Serialize;

use crate::error::CliError;
use crate::pipeline::{
    AnalyzeOut, CalibrationOutcome, CurateOut, ItemFailure, PerturbOut, RunSummary, ScoreOut, ValenceOutcome,
};

/// Everything a run produced, for reporting.
#[derive(Clone, Debug, Default)]
pub struct ReportBundle {
    pub curation: Option<CurateOut>,
    pub perturb: Option<PerturbOut>,
    pub scores: Option<ScoreOut>,
    pub failures: Vec<ItemFailure>,
    pub analysis: Option<AnalyzeOut>,
    pub valence: Vec<ValenceOutcome>,
    pub rrf: Vec<RrfEstimate>,
    pub calibration: Vec<CalibrationOutcome>,
    pub humanval: Option<HumanValidationReport>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::other)?;
    w.write_record(header).map_err(CliError::other)?;
    for r in rows {
        w.write_record(&r).map_err(CliError::other)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::other)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct CurationSummary<'a> {
    n_detections: usize,
    n_items: usize,
    n_rejected: usize,
    rejections_by_rule: BTreeMap<&'a str, usize>,
    items_by_size_bin: BTreeMap<&'a str, usize>,
    items_by_category: BTreeMap<&'a str, usize>,
    caption_failures: usize,
}

struct VariantRow<'a> {
    item_id: &'a str,
    variant: &'a str,
    sha256: &'a str,
    bg_delta: Option<f64>,
    seam_ratio: Option<f64>,
    kept: bool,
}

#[derive(Serialize)]
struct RunOverview<'a> {
    n_detections: usize,
    n_curated: usize,
    n_rejected: usize,
    n_variants: usize,
    n_filtered_variants: usize,
    failed_items: usize,
    failure_rate: f64,
    scorers: &'a [String],
    warnings: &'a [String],
    failures: &'a [ItemFailure],
}

const CELL_HEADER: [&str; 18] = [
    "scorer", "dataset", "family", "level", "n", "n_excluded", "median_pct", "ci_lo", "ci_hi", "sw_p_ref",
    "sw_p_pert", "test", "statistic", "p_value", "p_holm", "cliffs_delta", "beta1", "notes",
];

/// Writes the bundle into `dir`, replacing earlier contents.
pub fn emit_reports(dir: &Path, bundle: &ReportBundle, summary: &RunSummary) -> Result<(), CliError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir.join("figures"))?;

    write_json(
        &dir.join("run_summary.json"),
        &RunOverview {
            n_detections: summary.n_detections,
            n_curated: summary.n_curated,
            n_rejected: summary.n_rejected,
            n_variants: summary.n_variants,
            n_filtered_variants: summary.n_filtered_variants,
            failed_items: summary.failed_items,
            failure_rate: summary.failure_rate,
            scorers: &summary.scorers,
            warnings: &summary.warnings,
            failures: &bundle.failures,
        },
    )?;

    if let Some(c) = &bundle.curation {
        let mut s = CurationSummary {
            n_detections: c.n_detections,
            n_items: c.items.len(),
            n_rejected: c.rejections.len(),
            rejections_by_rule: BTreeMap::new(),
            items_by_size_bin: BTreeMap::new(),
            items_by_category: BTreeMap::new(),
            caption_failures: c.failures.len(),
        };
        for r in &c.rejections {
            *s.rejections_by_rule.entry(r.rule.as_str()).or_default() += 1;
        }
        for it in &c.items {
            *s.items_by_size_bin.entry(it.record.size_bin.label()).or_default() += 1;
            *s.items_by_category.entry(it.record.category.as_str()).or_default() += 1;
        }
        write_json(&dir.join("curation_summary.json"), &s)?;
        write_csv(
            &dir.join("rejections.csv"),
            &["item_id", "rule", "detail"],
            c.rejections.iter().map(|r| vec![r.item_id.clone(), r.rule.clone(), r.detail.clone()]),
        )?;
        write_csv(
            &dir.join("items.csv"),
            &["item_id", "dataset", "label", "category", "coverage", "size_bin", "mask_from_bbox"],
            c.items.iter().map(|it| {
                let r = &it.record;
                vec![
                    r.item_id.clone(),
                    r.dataset.clone(),
                    r.label.clone(),
                    r.category.as_str().into(),
                    format!("{}", r.coverage),
                    r.size_bin.label().into(),
                    r.mask_from_bbox.to_string(),
                ]
            }),
        )?;
    }

    if let Some(p) = &bundle.perturb {
        let rows: Vec<VariantRow> = p
            .items
            .iter()
            .flat_map(|(id, imgs)| {
                imgs.variants.iter().map(move |(k, v)| VariantRow {
                    item_id: id,
                    variant: k,
                    sha256: &v.sha256,
                    bg_delta: v.bg_delta,
                    seam_ratio: v.seam_ratio,
                    kept: v.kept,
                })
            })
            .collect();
        write_csv(
            &dir.join("variants.csv"),
            &["item_id", "variant", "sha256", "bg_delta", "seam_ratio", "kept"],
            rows.iter().map(|r| {
                vec![
                    r.item_id.into(),
                    r.variant.into(),
                    r.sha256.into(),
                    opt(r.bg_delta),
                    opt(r.seam_ratio),
                    r.kept.to_string(),
                ]
            }),
        )?;
    }

    if let Some(s) = &bundle.scores {
        write_csv(
            &dir.join("scores.csv"),
            &["scorer", "item_id", "image", "caption", "score"],
            s.tables.iter().flat_map(|(id, t)| {
                t.rows.iter().map(move |r| {
                    vec![id.clone(), r.item_id.clone(), r.image.clone(), r.caption.clone(), format!("{}", r.score)]
                })
            }),
        )?;
    }

    let empty = AnalyzeOut::default();
    let analysis = bundle.analysis.as_ref().unwrap_or(&empty);
    write_json(&dir.join("cells.json"), &analysis.cells)?;
    write_csv(
        &dir.join("cells.csv"),
        &CELL_HEADER,
        analysis.cells.iter().map(|c| {
            vec![
                c.scorer.clone(),
                c.dataset.clone(),
                c.family.to_string(),
                c.level.clone(),
                c.n.to_string(),
                c.n_excluded.to_string(),
                opt(c.median),
                opt(c.ci_lo),
                opt(c.ci_hi),
                opt(c.sw_p_ref),
                opt(c.sw_p_pert),
                c.test.map(|t| t.as_str().to_string()).unwrap_or_default(),
                opt(c.statistic),
                opt(c.p_value),
                opt(c.p_holm),
                opt(c.cliffs_delta),
                c.beta1.clone(),
                c.notes.join("; "),
            ]
        }),
    )?;
    write_json(&dir.join("factor_tests.json"), &analysis.factors)?;
    write_csv(
        &dir.join("factor_tests.csv"),
        &["scorer", "dataset", "family", "factor", "groups", "h", "df", "p_value", "note"],
        analysis.factors.iter().map(|f| {
            vec![
                f.scorer.clone(),
                f.dataset.clone(),
                f.family.to_string(),
                f.factor.clone(),
                f.groups.join(";"),
                opt(f.h),
                f.df.to_string(),
                opt(f.p_value),
                f.note.clone().unwrap_or_default(),
            ]
        }),
    )?;

    write_csv(
        &dir.join("rrf_report.csv"),
        &["scorer", "family", "d", "rrf", "ci_lo", "ci_hi", "d_raw", "exhaustive", "n_items", "n_boot", "seed", "monotonicity_flag"],
        bundle.rrf.iter().map(|r| {
            vec![
                r.scorer.clone(),
                r.family.clone(),
                format!("{}", r.d_pct),
                format!("{}", r.rrf),
                format!("{}", r.ci_lo),
                format!("{}", r.ci_hi),
                format!("{}", r.d_raw),
                format!("{}", r.exhaustive),
                r.n_items.to_string(),
                r.n_boot.to_string(),
                r.seed.to_string(),
                r.monotonicity_flag.to_string(),
            ]
        }),
    )?;

    write_json(&dir.join("calibration_report.json"), &bundle.calibration)?;
    let mut calib_rows = Vec::new();
    for c in &bundle.calibration {
        if let Some(r) = &c.report {
            for a in &r.axes {
                calib_rows.push(vec![
                    c.scorer.clone(),
                    format!("{}", r.lambda),
                    a.axis.to_string(),
                    format!("{}", a.before_pct),
                    format!("{}", a.after_pct),
                    format!("{}", a.reduction_pct),
                ]);
            }
        }
    }
    write_csv(
        &dir.join("calibration_report.csv"),
        &["scorer", "lambda", "axis", "sensitivity_before_pct", "sensitivity_after_pct", "reduction_pct"],
        calib_rows,
    )?;

    write_json(&dir.join("human_validation_report.json"), &bundle.humanval)?;
    write_json(&dir.join("valence_report.json"), &bundle.valence)?;

    let mut by_scorer: BTreeMap<&str, Vec<&ReportCell>> = BTreeMap::new();
    for c in &analysis.cells {
        by_scorer.entry(c.scorer.as_str()).or_default().push(c);
    }
    for (scorer, cells) in by_scorer {
        std::fs::write(dir.join("figures").join(format!("cells_{scorer}.svg")), cells_svg(scorer, &cells))?;
    }
    let mut rrf_by_scorer: BTreeMap<&str, Vec<&RrfEstimate>> = BTreeMap::new();
    for r in &bundle.rrf {
        rrf_by_scorer.entry(r.scorer.as_str()).or_default().push(r);
    }
    for (scorer, rows) in rrf_by_scorer {
        std::fs::write(dir.join("figures").join(format!("rrf_{scorer}.svg")), rrf_svg(scorer, &rows))?;
    }
    Ok(())
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Forest plot of median percent change with its interval, one `<g>` per pooled cell.
pub fn cells_svg(scorer: &str, cells: &[&ReportCell]) -> String {
    let cells: Vec<&&ReportCell> = cells.iter().filter(|c| c.level == ALL_LEVELS).collect();
    let row_h = 18.0;
    let (left, width) = (220.0, 360.0);
    let height = 40.0 + row_h * cells.len() as f64;
    let lim = cells
        .iter()
        .flat_map(|c| [c.ci_lo, c.ci_hi, c.median])
        .flatten()
        .map(f64::abs)
        .fold(1.0f64, f64::max)
        * 1.1;
    let x = |v: f64| left + (v + lim) / (2.0 * lim) * width;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="11">"#,
        left + width + 20.0
    );
    let _ = writeln!(s, r#"<text x="4" y="14">{} median % change (95% BCa)</text>"#, esc(scorer));
    let _ = writeln!(
        s,
        r#"<line x1="{0:.2}" y1="22" x2="{0:.2}" y2="{1:.2}" stroke="grey" stroke-dasharray="3,3"/>"#,
        x(0.0),
        height - 4.0
    );
    for (i, c) in cells.iter().enumerate() {
        let y = 32.0 + row_h * i as f64;
        let label = format!("{} / {}", c.dataset, c.family);
        let _ = writeln!(s, r#"<g class="cell" data-family="{}" data-dataset="{}">"#, c.family, esc(&c.dataset));
        let _ = writeln!(s, r#"  <text x="4" y="{:.2}">{}</text>"#, y + 4.0, esc(&label));
        if let (Some(lo), Some(hi)) = (c.ci_lo, c.ci_hi) {
            let _ = writeln!(
                s,
                r#"  <line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
                x(lo),
                x(hi)
            );
        }
        if let Some(m) = c.median {
            let _ = writeln!(s, r#"  <circle cx="{:.2}" cy="{y:.2}" r="3"/>"#, x(m));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// Flip risk against gap, one polyline per family.
pub fn rrf_svg(scorer: &str, rows: &[&RrfEstimate]) -> String {
    let mut fams: BTreeMap<&str, Vec<&RrfEstimate>> = BTreeMap::new();
    for r in rows {
        fams.entry(r.family.as_str()).or_default().push(r);
    }
    let dmax = rows.iter().map(|r| r.d_pct).fold(0.0f64, f64::max).max(1e-9);
    let (w, h, pad) = (420.0, 260.0, 40.0);
    let x = |d: f64| pad + d / dmax * (w - 2.0 * pad);
    let y = |p: f64| h - pad - p / 0.5 * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="4" y="14">{} flip risk by gap (% of range)</text>"#, esc(scorer));
    for (i, (fam, pts)) in fams.iter().enumerate() {
        let path: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", x(r.d_pct), y(r.rrf))).collect();
        let _ = writeln!(s, r#"<g class="family" data-family="{}">"#, esc(fam));
        let _ = writeln!(s, r#"  <polyline fill="none" stroke="black" points="{}"/>"#, path.join(" "));
        let _ = writeln!(s, r#"  <text x="{:.2}" y="{:.2}">{}</text>"#, w - pad + 2.0, 30.0 + 12.0 * i as f64, esc(fam));
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
