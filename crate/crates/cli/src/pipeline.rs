//! Stage orchestration: corpus → curate → perturb → score → analyze → rrf → calibrate →
//! humanval. Each stage stores its output with a hash of its inputs under
//! `<output>/stages/` and is skipped when the hash matches.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use invariaudit_core::calibrate::{
    calibrate, calibrated_table, dev_split, CalibrationInput, CalibrationReport, ItemContrasts,
};
use invariaudit_core::captiongen::{caption_set, CaptionSet, Lexicon};
use invariaudit_core::catalog::{curate, ItemRecord, RawDetection, Rejection, TaxonomyMap};
use invariaudit_core::humanval::{
    acceptability_kappa, annotation_counts, majority_preference, preference_accuracy,
    preference_kappa, read_annotations, refilter_and_recompute, synthetic_annotations,
    write_annotations, AnnotationItem, HumanValidationReport, PreferencePair, RefilterMode,
    SyntheticRates,
};
use invariaudit_core::perturb::{apply, filter_by_artifacts, Frame, PerturbationSpec};
use invariaudit_core::rrf::{gap_sweep, RrfEstimate};
use invariaudit_core::scorebridge::{
    embed_words, valence_analysis, BridgeConfig, CachedScorer, ExternalScorer, ImageRef,
    MockScorer, Provenance, ProvenanceRegistry, ScoreCache, ScoreError, Scorer, ValenceReport,
    NEGATIVE_POLE, POSITIVE_POLE,
};
use invariaudit_core::stats::pipeline::{
    build_cells, factor_tests, paired_pipeline, CellInput, FactorTest, ItemFactors, ReportCell,
};
use invariaudit_core::synth::synthesize;
use invariaudit_core::table::{
    item_contrasts, Axis, ContrastFamily, PairKey, ScoreRow, ScoreTable, BASE_CAPTION,
    ORIGINAL_IMAGE,
};
use invariaudit_core::sha256_hex;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{RunConfig, ScorerConfig, ScorerRole};
use crate::error::CliError;
use crate::report::{emit_reports, ReportBundle};

pub const CACHE_ENV: &str = "INVARIAUDIT_CACHE_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Curate,
    Perturb,
    Score,
    Analyze,
    Rrf,
    Calibrate,
    Humanval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub hash: String,
    pub cache_hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item_id: String,
    pub stage: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<StageStatus>,
    pub n_detections: usize,
    pub n_curated: usize,
    pub n_rejected: usize,
    pub n_variants: usize,
    pub n_filtered_variants: usize,
    pub failed_items: usize,
    pub failure_rate: f64,
    pub scorers: Vec<String>,
    pub warnings: Vec<String>,
    pub report_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct StageFile<T> {
    hash: String,
    data: T,
}

struct Ctx {
    stage_dir: PathBuf,
    statuses: Vec<StageStatus>,
}

impl Ctx {
    fn stage<T, K, V, F>(&mut self, name: &str, key: &K, valid: V, compute: F) -> Result<(T, String), CliError>
    where
        T: Serialize + DeserializeOwned,
        K: Serialize,
        V: Fn(&T) -> bool,
        F: FnOnce() -> Result<T, CliError>,
    {
        let material = serde_json::to_vec(&json!({"stage": name, "key": key})).map_err(CliError::other)?;
        let hash = sha256_hex(&material);
        let path = self.stage_dir.join(format!("{name}.json"));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(f) = serde_json::from_slice::<StageFile<T>>(&bytes) {
                if f.hash == hash && valid(&f.data) {
                    self.statuses.push(StageStatus { stage: name.into(), hash: hash.clone(), cache_hit: true });
                    return Ok((f.data, hash));
                }
            }
        }
        let data = compute()?;
        let f = StageFile { hash: hash.clone(), data };
        std::fs::create_dir_all(&self.stage_dir)?;
        std::fs::write(&path, serde_json::to_vec(&f).map_err(CliError::other)?)?;
        self.statuses.push(StageStatus { stage: name.into(), hash: hash.clone(), cache_hit: false });
        Ok((f.data, hash))
    }
}

fn file_sha(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CuratedItem {
    pub record: ItemRecord,
    /// Image path resolved against the manifest directory.
    pub source: PathBuf,
    pub captions: CaptionSet,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CurateOut {
    pub n_detections: usize,
    pub items: Vec<CuratedItem>,
    pub rejections: Vec<Rejection>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantMeta {
    pub path: PathBuf,
    pub sha256: String,
    pub bg_delta: Option<f64>,
    pub seam_ratio: Option<f64>,
    /// Survived the artifact filter.
    pub kept: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemImages {
    pub orig_path: PathBuf,
    pub orig_sha256: String,
    pub variants: BTreeMap<String, VariantMeta>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PerturbOut {
    pub items: BTreeMap<String, ItemImages>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredTable {
    pub range: (f64, f64),
    pub rows: Vec<ScoreRow>,
}

impl StoredTable {
    pub fn to_table(&self, id: &str) -> ScoreTable {
        let mut t = ScoreTable::new(id, self.range);
        for r in &self.rows {
            t.insert(&r.item_id, PairKey::new(r.image.clone(), r.caption.clone()), r.score);
        }
        t
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScoreOut {
    pub tables: BTreeMap<String, StoredTable>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AnalyzeOut {
    pub cells: Vec<ReportCell>,
    pub factors: Vec<FactorTest>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub scorer: String,
    pub report: Option<CalibrationReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValenceOutcome {
    pub scorer: String,
    pub family: ContrastFamily,
    pub shifts: BTreeMap<String, f64>,
    pub report: Option<ValenceReport>,
    pub error: Option<String>,
}

/// A configured scorer ready to use.
pub struct ScorerHandle {
    pub id: String,
    pub role: ScorerRole,
    pub scorer: Arc<dyn Scorer>,
    /// Everything that determines its scores, for stage hashing.
    pub descriptor: Value,
}

/// Builds every scorer; external processes are started and must complete their handshake.
pub fn build_scorers(cfg: &RunConfig, registry: &ProvenanceRegistry) -> Result<Vec<ScorerHandle>, CliError> {
    let mut out = Vec::new();
    for s in &cfg.scorers {
        match s {
            ScorerConfig::Mock { id, role, .. } => {
                let spec = s.mock_spec()?.expect("mock scorer");
                let descriptor = json!({"mock": spec});
                out.push(ScorerHandle {
                    id: id.clone(),
                    role: *role,
                    scorer: Arc::new(MockScorer::new(spec, registry.clone())),
                    descriptor,
                });
            }
            ScorerConfig::External { role, bridge } => {
                let ext = spawn_external(bridge)?;
                let descriptor = json!({"external": ext.handshake()});
                out.push(ScorerHandle { id: ext.id().to_string(), role: *role, scorer: Arc::new(ext), descriptor });
            }
        }
    }
    let mut seen = BTreeSet::new();
    for h in &out {
        if !seen.insert(h.id.clone()) {
            return Err(CliError::Config(format!("scorers: duplicate scorer id {:?}", h.id)));
        }
    }
    Ok(out)
}

fn spawn_external(bridge: &BridgeConfig) -> Result<ExternalScorer, CliError> {
    ExternalScorer::spawn(bridge.clone()).map_err(|e| match e {
        ScoreError::Handshake(m) => CliError::Handshake(m),
        other => CliError::Handshake(other.to_string()),
    })
}

fn read_manifest(path: &Path) -> Result<Vec<(RawDetection, PathBuf)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Other(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let det: RawDetection = serde_json::from_str(line)
            .map_err(|e| CliError::Other(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let src = base.join(&det.image_path);
        out.push((det, src));
    }
    Ok(out)
}

fn safe_key(key: &str) -> String {
    key.replace(':', "_").replace('+', "p").replace('-', "m").replace('.', "_")
}

fn item_factors(item: &ItemRecord) -> ItemFactors {
    ItemFactors {
        dataset: item.dataset.clone(),
        size_bin: item.size_bin.label().to_string(),
        category: item.category.as_str().to_string(),
    }
}

/// Contrasts of every item from its kept image variants and caption set.
pub fn contrasts_for(curated: &CurateOut, images: &PerturbOut) -> ItemContrasts {
    let mut out = ItemContrasts::new();
    for it in &curated.items {
        let id = &it.record.item_id;
        let Some(imgs) = images.items.get(id) else { continue };
        let specs: Vec<PerturbationSpec> = imgs
            .variants
            .iter()
            .filter(|(_, v)| v.kept)
            .filter_map(|(k, _)| PerturbationSpec::from_key(k).ok())
            .collect();
        out.insert(id.clone(), item_contrasts(&specs, Some(&it.captions)));
    }
    out
}

pub struct RunArtifacts {
    pub summary: RunSummary,
    pub bundle: ReportBundle,
}

fn cache_dir(cfg: &RunConfig) -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    cfg.cache_dir.clone().unwrap_or_else(|| cfg.output_dir.join("cache"))
}

/// Runs every stage up to and including `until`, then writes the report bundle.
pub fn run_audit(cfg: &RunConfig, until: Stage) -> Result<RunArtifacts, CliError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Other(format!("cannot create output dir {}: {e}", out.display())))?;
    let registry = ProvenanceRegistry::new();
    // Handshakes happen before any image is materialized.
    let scorers = if until >= Stage::Score { build_scorers(cfg, &registry)? } else { Vec::new() };
    let mut ctx = Ctx { stage_dir: out.join("stages"), statuses: Vec::new() };
    let mut warnings = Vec::new();

    // Corpus and curation.
    let mut manifests = cfg.input.manifests.clone();
    if let Some(sp) = &cfg.input.synthetic {
        let dir = out.join("corpus");
        let manifest = dir.join("detections.jsonl");
        let check = manifest.clone();
        let (_, _) = ctx.stage(
            "corpus",
            sp,
            |_: &usize| check.exists(),
            || {
                let dets = synthesize(&dir, sp).map_err(CliError::other)?;
                Ok(dets.len())
            },
        )?;
        manifests.push(manifest);
    }
    let mut manifest_hashes = Vec::new();
    for m in &manifests {
        manifest_hashes.push((m.display().to_string(), file_sha(m)?));
    }
    let taxonomy = match &cfg.input.taxonomy {
        Some(p) => TaxonomyMap::from_json(
            &std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("input.taxonomy: {e}")))?,
        )
        .map_err(|e| CliError::Config(format!("input.taxonomy: {e}")))?,
        None => TaxonomyMap::builtin(),
    };
    let modifier_families = cfg.modifier_families();
    let (curated, curate_hash) = ctx.stage(
        "curate",
        &json!({"manifests": manifest_hashes, "taxonomy": taxonomy.hash(), "modifiers": modifier_families}),
        |_: &CurateOut| true,
        || {
            let mut dets = Vec::new();
            let mut sources = BTreeMap::new();
            for m in &manifests {
                for (d, src) in read_manifest(m)? {
                    sources.insert(d.image_id.clone(), src);
                    dets.push(d);
                }
            }
            let outcome = curate(&dets, &taxonomy);
            let lexicon = Lexicon::builtin();
            let mut items = Vec::new();
            let mut failures = Vec::new();
            for mut record in outcome.items {
                match caption_set(&lexicon, &record.label, record.category, &modifier_families) {
                    Ok(captions) => {
                        record.captions = captions.as_map();
                        let source = sources[&record.item_id].clone();
                        items.push(CuratedItem { record, source, captions });
                    }
                    Err(e) => failures.push(ItemFailure {
                        item_id: record.item_id.clone(),
                        stage: "captions".into(),
                        detail: e.to_string(),
                    }),
                }
            }
            Ok(CurateOut { n_detections: dets.len(), items, rejections: outcome.rejections, failures })
        },
    )?;

    let mut summary = RunSummary {
        stages: Vec::new(),
        n_detections: curated.n_detections,
        n_curated: curated.items.len(),
        n_rejected: curated.rejections.len(),
        n_variants: 0,
        n_filtered_variants: 0,
        failed_items: 0,
        failure_rate: 0.0,
        scorers: scorers.iter().map(|s| s.id.clone()).collect(),
        warnings: Vec::new(),
        report_dir: out.join("reports"),
    };
    let mut bundle = ReportBundle { curation: Some(curated.clone()), ..Default::default() };
    let finish = |ctx: Ctx, mut summary: RunSummary, bundle: ReportBundle, warnings: Vec<String>| {
        summary.stages = ctx.statuses;
        summary.warnings = warnings;
        emit_reports(&summary.report_dir, &bundle, &summary)?;
        write_run_log(&out, &summary)?;
        Ok(RunArtifacts { summary, bundle })
    };
    if until == Stage::Curate {
        return finish(ctx, summary, bundle, warnings);
    }

    // Perturbation.
    let specs = cfg.image_specs();
    let variant_dir = out.join("variants");
    let (images, _) = ctx.stage(
        "perturb",
        &json!({"curate": curate_hash, "specs": specs, "perturb": cfg.perturb, "filter": cfg.artifact_filter}),
        |p: &PerturbOut| p.items.values().all(|i| i.variants.values().all(|v| v.path.exists())),
        || perturb_stage(cfg, &curated, &specs, &variant_dir),
    )?;
    summary.n_variants = images.items.values().map(|i| i.variants.len()).sum();
    summary.n_filtered_variants = images.items.values().flat_map(|i| i.variants.values()).filter(|v| !v.kept).count();
    let contrasts = contrasts_for(&curated, &images);
    bundle.perturb = Some(images.clone());
    if until == Stage::Perturb {
        let failed = count_failed(&[&curated.failures, &images.failures]);
        summary.failed_items = failed;
        summary.failure_rate = rate(failed, curated.items.len() + curated.failures.len());
        return finish(ctx, summary, bundle, warnings);
    }

    // Scoring.
    for it in &curated.items {
        let id = &it.record.item_id;
        let Some(imgs) = images.items.get(id) else { continue };
        let base = it.captions.as_map().get(BASE_CAPTION).cloned();
        let prov = |key: &str| Provenance { item_id: id.clone(), image_key: key.into(), base_caption: base.clone() };
        registry.register(&imgs.orig_sha256, prov(ORIGINAL_IMAGE));
        for (k, v) in &imgs.variants {
            registry.register(&v.sha256, prov(k));
        }
    }
    let cache = Arc::new(
        ScoreCache::open(&cache_dir(cfg)).map_err(|e| CliError::Other(format!("score cache: {e}")))?,
    );
    let descriptors: Vec<&Value> = scorers.iter().map(|s| &s.descriptor).collect();
    let (scores, score_hash) = ctx.stage(
        "score",
        &json!({"images": ctx_hash(&images), "contrasts": contrasts, "captions": curated.items.iter().map(|i| &i.captions).collect::<Vec<_>>(), "scorers": descriptors}),
        |_: &ScoreOut| true,
        || score_stage(&scorers, &cache, &curated, &images, &contrasts),
    )?;
    let failed = count_failed(&[&curated.failures, &images.failures, &scores.failures]);
    let total = curated.items.len() + curated.failures.len();
    summary.failed_items = failed;
    summary.failure_rate = rate(failed, total);
    if summary.failure_rate > cfg.max_item_failure_rate {
        return Err(CliError::FailureBudget { failed, total, limit: cfg.max_item_failure_rate });
    }
    let tables: BTreeMap<String, ScoreTable> =
        scores.tables.iter().map(|(id, t)| (id.clone(), t.to_table(id))).collect();
    bundle.failures = [&curated.failures, &images.failures, &scores.failures].into_iter().flatten().cloned().collect();
    bundle.scores = Some(scores.clone());
    if until == Stage::Score {
        return finish(ctx, summary, bundle, warnings);
    }

    // Paired statistics.
    let factors: BTreeMap<String, (ItemFactors, Vec<_>)> = curated
        .items
        .iter()
        .filter_map(|it| {
            let cs = contrasts.get(&it.record.item_id)?;
            Some((it.record.item_id.clone(), (item_factors(&it.record), cs.clone())))
        })
        .collect();
    let cell_inputs: Vec<CellInput> = tables.values().flat_map(|t| build_cells(t, &factors)).collect();
    let (analysis, _) = ctx.stage(
        "analyze",
        &json!({"scores": score_hash, "stats": cfg.stats}),
        |_: &AnalyzeOut| true,
        || Ok(AnalyzeOut { cells: paired_pipeline(&cell_inputs, &cfg.stats), factors: factor_tests(&cell_inputs) }),
    )?;
    bundle.analysis = Some(analysis.clone());

    // Valence analysis for scorers that embed text.
    let valence = valence_stage(&scorers, &analysis.cells);
    bundle.valence = valence;
    if until == Stage::Analyze {
        return finish(ctx, summary, bundle, warnings);
    }

    // Flip risk.
    let (rrf, _) = ctx.stage(
        "rrf",
        &json!({"scores": score_hash, "rrf": cfg.rrf}),
        |_: &Vec<RrfEstimate>| true,
        || rrf_stage(cfg, &tables, &contrasts),
    )?;
    bundle.rrf = rrf;
    if until == Stage::Rrf {
        return finish(ctx, summary, bundle, warnings);
    }

    // Calibration.
    let references: Vec<ScoreTable> = scorers
        .iter()
        .filter(|s| s.role == ScorerRole::Reference)
        .filter_map(|s| tables.get(&s.id).cloned())
        .collect();
    let dev = dev_split(contrasts.keys(), cfg.calibration.dev_fraction, cfg.calibration.split_seed);
    let audited: Vec<&ScorerHandle> = scorers.iter().filter(|s| s.role == ScorerRole::Audited).collect();
    let (calibration, calib_hash) = ctx.stage(
        "calibrate",
        &json!({"scores": score_hash, "calibration": cfg.calibration, "rrf": cfg.rrf,
                "references": references.iter().map(|r| &r.scorer_id).collect::<Vec<_>>()}),
        |_: &Vec<CalibrationOutcome>| true,
        || {
            let mut out = Vec::new();
            for s in &audited {
                let Some(table) = tables.get(&s.id) else { continue };
                if references.is_empty() {
                    out.push(CalibrationOutcome {
                        scorer: s.id.clone(),
                        report: None,
                        error: Some("no reference scorers configured".into()),
                    });
                    continue;
                }
                let input = CalibrationInput { table, contrasts: &contrasts, references: &references, dev: &dev };
                match calibrate(&cfg.calibration, &input, &cfg.rrf) {
                    Ok(r) => out.push(CalibrationOutcome { scorer: s.id.clone(), report: Some(r), error: None }),
                    Err(e) => {
                        out.push(CalibrationOutcome { scorer: s.id.clone(), report: None, error: Some(e.to_string()) })
                    }
                }
            }
            Ok(out)
        },
    )?;
    for c in &calibration {
        if let Some(e) = &c.error {
            warnings.push(format!("calibration of {}: {e}", c.scorer));
        }
        if let Some(r) = &c.report {
            warnings.extend(r.warnings.iter().map(|w| format!("calibration of {}: {w}", c.scorer)));
        }
    }
    bundle.calibration = calibration.clone();
    if until == Stage::Calibrate {
        return finish(ctx, summary, bundle, warnings);
    }

    // Human validation.
    let calibrated: BTreeMap<String, ScoreTable> = calibration
        .iter()
        .filter_map(|c| {
            let r = c.report.as_ref()?;
            let table = tables.get(&c.scorer)?;
            let input = CalibrationInput { table, contrasts: &contrasts, references: &references, dev: &dev };
            Some((format!("{}+calibrated", c.scorer), calibrated_table(&input, r.lambda, &r.weights)))
        })
        .collect();
    let annotations_sha = cfg.humanval.annotations.as_deref().map(file_sha).transpose()?;
    let (humanval, _) = ctx.stage(
        "humanval",
        &json!({"scores": score_hash, "calibration": calib_hash, "stats": cfg.stats, "seed": cfg.seed,
                "humanval": cfg.humanval.synthetic, "annotations": annotations_sha}),
        |_: &Option<HumanValidationReport>| true,
        || humanval_stage(cfg, &out, &curated, &images, &tables, &calibrated, &cell_inputs),
    )?;
    bundle.humanval = humanval;
    finish(ctx, summary, bundle, warnings)
}

fn ctx_hash(images: &PerturbOut) -> String {
    let shas: Vec<(&String, &String, Vec<(&String, &String, bool)>)> = images
        .items
        .iter()
        .map(|(k, v)| (k, &v.orig_sha256, v.variants.iter().map(|(vk, m)| (vk, &m.sha256, m.kept)).collect()))
        .collect();
    sha256_hex(&serde_json::to_vec(&shas).expect("serializable"))
}

fn rate(failed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        failed as f64 / total as f64
    }
}

fn count_failed(lists: &[&Vec<ItemFailure>]) -> usize {
    lists.iter().flat_map(|l| l.iter().map(|f| f.item_id.as_str())).collect::<BTreeSet<_>>().len()
}

fn write_run_log(out: &Path, summary: &RunSummary) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(summary).map_err(CliError::other)?;
    std::fs::write(out.join("run_log.json"), text + "\n")?;
    Ok(())
}

fn perturb_stage(
    cfg: &RunConfig,
    curated: &CurateOut,
    specs: &[PerturbationSpec],
    variant_dir: &Path,
) -> Result<PerturbOut, CliError> {
    let results: Vec<Result<(String, Option<ItemImages>, Vec<ItemFailure>), CliError>> = curated
        .items
        .par_iter()
        .map(|it| {
            let id = &it.record.item_id;
            let fail = |detail: String| ItemFailure { item_id: id.clone(), stage: "perturb".into(), detail };
            let (orig_sha, frame) = match file_sha(&it.source).and_then(|sha| {
                Frame::load(&it.source).map(|f| (sha, f)).map_err(CliError::other)
            }) {
                Ok(x) => x,
                Err(e) => return Ok((id.clone(), None, vec![fail(e.to_string())])),
            };
            let mut imgs =
                ItemImages { orig_path: it.source.clone(), orig_sha256: orig_sha, variants: BTreeMap::new() };
            let mask = it.record.mask();
            let salient = it.record.salient_mask();
            let salient = (salient.area() > 0).then_some(&salient);
            let dir = variant_dir.join(id);
            std::fs::create_dir_all(&dir)?;
            let mut failures = Vec::new();
            for spec in specs {
                match apply(id, spec, &frame, &mask, salient, &cfg.perturb.reposition, &cfg.perturb.diagnostics) {
                    Ok(rec) => {
                        let bytes = rec.image.encode_png().map_err(CliError::other)?;
                        let path = dir.join(format!("{}.png", safe_key(&spec.key())));
                        std::fs::write(&path, &bytes)?;
                        imgs.variants.insert(
                            spec.key(),
                            VariantMeta {
                                path,
                                sha256: sha256_hex(&bytes),
                                bg_delta: rec.diagnostics.map(|d| d.bg_delta),
                                seam_ratio: rec.diagnostics.map(|d| d.seam_ratio),
                                kept: true,
                            },
                        );
                    }
                    Err(e) => failures.push(fail(format!("{}: {e}", spec.key()))),
                }
            }
            Ok((id.clone(), Some(imgs), failures))
        })
        .collect();
    let mut out = PerturbOut::default();
    for r in results {
        let (id, imgs, failures) = r?;
        if let Some(imgs) = imgs {
            out.items.insert(id, imgs);
        }
        out.failures.extend(failures);
    }
    if cfg.artifact_filter.enabled {
        let mut refs: Vec<(String, String, f64, f64)> = Vec::new();
        for (id, imgs) in &out.items {
            for (k, v) in &imgs.variants {
                if let (Some(b), Some(s)) = (v.bg_delta, v.seam_ratio) {
                    refs.push((id.clone(), k.clone(), b, s));
                }
            }
        }
        let bg: Vec<f64> = refs.iter().map(|r| r.2).collect();
        let seam: Vec<f64> = refs.iter().map(|r| r.3).collect();
        let kept: BTreeSet<usize> =
            filter_by_artifacts(&bg, &seam, cfg.artifact_filter.q, cfg.artifact_filter.criterion).into_iter().collect();
        for (i, (id, k, _, _)) in refs.iter().enumerate() {
            if !kept.contains(&i) {
                if let Some(v) = out.items.get_mut(id).and_then(|x| x.variants.get_mut(k)) {
                    v.kept = false;
                }
            }
        }
    }
    Ok(out)
}

fn score_stage(
    scorers: &[ScorerHandle],
    cache: &Arc<ScoreCache>,
    curated: &CurateOut,
    images: &PerturbOut,
    contrasts: &ItemContrasts,
) -> Result<ScoreOut, CliError> {
    let mut out = ScoreOut::default();
    for s in scorers {
        let cs = CachedScorer::new(Arc::clone(&s.scorer), Arc::clone(cache));
        let per_item: Vec<Result<Vec<ScoreRow>, ItemFailure>> = curated
            .items
            .par_iter()
            .filter(|it| contrasts.contains_key(&it.record.item_id))
            .map(|it| {
                let id = &it.record.item_id;
                let fail = |e: ScoreError| ItemFailure {
                    item_id: id.clone(),
                    stage: format!("score:{}", s.id),
                    detail: e.with_item(id).to_string(),
                };
                let imgs = &images.items[id];
                let captions = it.captions.as_map();
                let mut keys = BTreeSet::new();
                for c in &contrasts[id] {
                    keys.insert(c.reference.clone());
                    keys.insert(c.perturbed.clone());
                }
                let mut rows = Vec::new();
                for k in keys {
                    let image = if k.is_original_image() {
                        ImageRef { path: imgs.orig_path.clone(), sha256: imgs.orig_sha256.clone() }
                    } else {
                        let v = &imgs.variants[&k.image];
                        ImageRef { path: v.path.clone(), sha256: v.sha256.clone() }
                    };
                    let caption = captions
                        .get(&k.caption)
                        .ok_or_else(|| fail(ScoreError::InvalidInput(format!("no caption {}", k.caption))))?;
                    let (score, _) = cs.score(&image, caption).map_err(fail)?;
                    rows.push(ScoreRow { item_id: id.clone(), image: k.image.clone(), caption: k.caption.clone(), score });
                }
                Ok(rows)
            })
            .collect();
        let mut rows = Vec::new();
        for r in per_item {
            match r {
                Ok(v) => rows.extend(v),
                Err(f) => out.failures.push(f),
            }
        }
        out.tables.insert(s.id.clone(), StoredTable { range: s.scorer.range(), rows });
    }
    Ok(out)
}

fn rrf_stage(
    cfg: &RunConfig,
    tables: &BTreeMap<String, ScoreTable>,
    contrasts: &ItemContrasts,
) -> Result<Vec<RrfEstimate>, CliError> {
    let mut jobs = Vec::new();
    for (id, t) in tables {
        for fam in ContrastFamily::ALL {
            let groups: Vec<Vec<f64>> = contrasts
                .iter()
                .map(|(item, cs)| {
                    cs.iter().filter(|c| c.family == fam).filter_map(|c| t.pair(item, c)).map(|(r, p)| p - r).collect()
                })
                .filter(|g: &Vec<f64>| !g.is_empty())
                .collect();
            if groups.len() >= 2 {
                jobs.push((id.clone(), fam, groups, t.range_width()));
            }
        }
    }
    let results: Vec<Result<Vec<RrfEstimate>, CliError>> = jobs
        .par_iter()
        .map(|(id, fam, groups, width)| gap_sweep(id, fam.as_str(), groups, *width, &cfg.rrf).map_err(CliError::other))
        .collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn valence_stage(scorers: &[ScorerHandle], cells: &[ReportCell]) -> Vec<ValenceOutcome> {
    let mut out = Vec::new();
    for s in scorers.iter().filter(|s| s.scorer.capabilities().embed_text) {
        let mut by_family: BTreeMap<ContrastFamily, BTreeMap<String, f64>> = BTreeMap::new();
        for c in cells.iter().filter(|c| c.scorer == s.id && c.family.axis() == Some(Axis::Societal)) {
            if c.level == invariaudit_core::stats::pipeline::ALL_LEVELS {
                continue;
            }
            if let Some(m) = c.median {
                by_family.entry(c.family).or_default().insert(c.level.clone(), m);
            }
        }
        for (family, shifts) in by_family {
            let words = POSITIVE_POLE.iter().chain(NEGATIVE_POLE.iter()).copied().chain(shifts.keys().map(String::as_str));
            let result = embed_words(s.scorer.as_ref(), words)
                .and_then(|e| valence_analysis(&shifts, &e, &POSITIVE_POLE, &NEGATIVE_POLE));
            let (report, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(ValenceOutcome { scorer: s.id.clone(), family, shifts, report, error });
        }
    }
    out
}

fn humanval_stage(
    cfg: &RunConfig,
    out: &Path,
    curated: &CurateOut,
    images: &PerturbOut,
    tables: &BTreeMap<String, ScoreTable>,
    calibrated: &BTreeMap<String, ScoreTable>,
    cell_inputs: &[CellInput],
) -> Result<Option<HumanValidationReport>, CliError> {
    let (items, synthetic): (Vec<AnnotationItem>, bool) = match (&cfg.humanval.annotations, cfg.humanval.synthetic) {
        (Some(p), _) => (read_annotations(p).map_err(|e| CliError::Other(format!("annotations: {e}")))?, false),
        (None, true) => {
            let keys: Vec<(String, Option<String>)> = curated
                .items
                .iter()
                .filter_map(|it| {
                    let imgs = images.items.get(&it.record.item_id)?;
                    let (k, _) = imgs.variants.iter().find(|(_, v)| v.kept)?;
                    Some((it.record.item_id.clone(), Some(k.clone())))
                })
                .collect();
            let ann = synthetic_annotations(&keys, &SyntheticRates::default(), cfg.seed);
            write_annotations(&out.join("annotations.synthetic.jsonl"), &ann).map_err(CliError::other)?;
            (ann, true)
        }
        (None, false) => return Ok(None),
    };
    let mut notes = Vec::new();
    if synthetic {
        notes.push("annotations are synthetic, generated at the published marginal rates".into());
    }
    let counts = annotation_counts(&items).map_err(CliError::other)?;
    let kappa = |r: Result<f64, _>, what: &str, notes: &mut Vec<String>| match r {
        Ok(k) => Some(k),
        Err(e) => {
            notes.push(format!("{what} kappa: {e}"));
            None
        }
    };
    let kappa_acceptability = kappa(acceptability_kappa(&items), "acceptability", &mut notes);
    let kappa_preference = kappa(preference_kappa(&items), "preference", &mut notes);
    let mut refilters = Vec::new();
    for mode in [RefilterMode::DropOneSided, RefilterMode::DropPartials] {
        refilters.push(refilter_and_recompute(cell_inputs, &items, mode, &cfg.stats).map_err(CliError::other)?);
    }
    let mut preference = BTreeMap::new();
    let mut no_majority = 0;
    for (id, t) in tables.iter().chain(calibrated) {
        let mut pairs = Vec::new();
        for a in &items {
            let Some(human) = majority_preference(&a.preference_labels).map_err(CliError::other)? else {
                no_majority += 1;
                continue;
            };
            let variant = a.variant_key.clone().unwrap_or_else(|| ORIGINAL_IMAGE.into());
            pairs.push(PreferencePair {
                pair_id: format!("{}|{variant}", a.item_id),
                human,
                score_a: t.get(&a.item_id, &PairKey::original()),
                score_b: t.get(&a.item_id, &PairKey::new(variant, BASE_CAPTION)),
            });
        }
        if let Ok(acc) = preference_accuracy(&pairs, cfg.stats.n_resamples, cfg.stats.seed) {
            preference.insert(id.clone(), acc);
        }
    }
    if no_majority > 0 {
        notes.push(format!("{} pair evaluations skipped for three-way preference splits", no_majority));
    }
    Ok(Some(HumanValidationReport {
        synthetic,
        counts,
        kappa_acceptability,
        kappa_preference,
        refilters,
        preference_accuracy: preference,
        notes,
    }))
}
