//! Run configuration: one JSON document plus `--a.b=value` overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use invariaudit_core::calibrate::CalibrationConfig;
use invariaudit_core::captiongen::ModifierFamily;
use invariaudit_core::perturb::{
    Anchor, ArtifactCriterion, DiagnosticParams, PerturbationSpec, RepositionParams, BLUR_SIGMAS,
    ROTATION_ANGLES,
};
use invariaudit_core::rrf::RrfParams;
use invariaudit_core::scorebridge::{BridgeConfig, MockSpec};
use invariaudit_core::stats::pipeline::PipelineParams;
use invariaudit_core::synth::SynthParams;
use invariaudit_core::table::ContrastFamily;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub input: InputConfig,
    /// Contrast families to audit: image families and caption modifier families.
    pub families: Vec<ContrastFamily>,
    #[serde(default)]
    pub perturb: PerturbConfig,
    pub scorers: Vec<ScorerConfig>,
    #[serde(default)]
    pub stats: PipelineParams,
    #[serde(default)]
    pub rrf: RrfParams,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub artifact_filter: ArtifactFilterConfig,
    #[serde(default)]
    pub humanval: HumanValConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Score cache directory; the environment variable takes precedence.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_failure_rate")]
    pub max_item_failure_rate: f64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_failure_rate() -> f64 {
    0.1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Detection manifests (JSONL); image paths resolve against each manifest's directory.
    pub manifests: Vec<PathBuf>,
    /// Taxonomy mapping JSON; the built-in map when absent.
    pub taxonomy: Option<PathBuf>,
    /// Render a synthetic corpus into the output directory instead of reading manifests.
    pub synthetic: Option<SynthParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub rotation_angles: Vec<f64>,
    pub blur_sigmas: Vec<f64>,
    pub anchors: Vec<Anchor>,
    pub reposition: RepositionParams,
    pub diagnostics: DiagnosticParams,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            rotation_angles: ROTATION_ANGLES.to_vec(),
            blur_sigmas: BLUR_SIGMAS.to_vec(),
            anchors: Anchor::ALL.to_vec(),
            reposition: RepositionParams::default(),
            diagnostics: DiagnosticParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactFilterConfig {
    pub enabled: bool,
    /// Percent of reposition variants dropped.
    pub q: f64,
    pub criterion: ArtifactCriterion,
}

impl Default for ArtifactFilterConfig {
    fn default() -> Self {
        Self { enabled: true, q: 5.0, criterion: ArtifactCriterion::Either }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanValConfig {
    pub annotations: Option<PathBuf>,
    /// Generate synthetic annotations when no file is given.
    pub synthetic: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerRole {
    #[default]
    Audited,
    /// Used only as a correlation reference during calibration.
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerConfig {
    Mock {
        id: String,
        #[serde(default)]
        role: ScorerRole,
        /// invariant, spatial, framing, combined, reference_a, reference_b
        #[serde(default)]
        preset: Option<String>,
        /// Fields laid over the preset.
        #[serde(default)]
        spec: Option<Value>,
    },
    External {
        #[serde(default)]
        role: ScorerRole,
        bridge: BridgeConfig,
    },
}

impl ScorerConfig {
    pub fn role(&self) -> ScorerRole {
        match self {
            ScorerConfig::Mock { role, .. } | ScorerConfig::External { role, .. } => *role,
        }
    }

    pub fn mock_spec(&self) -> Result<Option<MockSpec>, CliError> {
        let ScorerConfig::Mock { id, preset, spec, .. } = self else { return Ok(None) };
        let base = match preset {
            Some(p) => MockSpec::preset(p, id)
                .ok_or_else(|| CliError::Config(format!("scorers.{id}.preset: unknown preset {p:?}")))?,
            None => MockSpec { id: id.clone(), ..Default::default() },
        };
        let mut v = serde_json::to_value(base).expect("mock spec serializes");
        if let Some(Value::Object(extra)) = spec {
            for (k, x) in extra {
                v[k] = x.clone();
            }
        } else if spec.is_some() {
            return Err(CliError::Config(format!("scorers.{id}.spec: expected an object")));
        }
        v["id"] = Value::String(id.clone());
        serde_json::from_value(v).map(Some).map_err(|e| CliError::Config(format!("scorers.{id}.spec: {e}")))
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when it parses, else taken
/// as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let assignment = assignment.trim_start_matches('-');
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let segs: Vec<&str> = path.split('.').collect();
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        let index = if cur.is_array() { seg.parse::<usize>().ok() } else { None };
        if let Some(idx) = index {
            let a = cur.as_array_mut().expect("checked array");
            let len = a.len();
            cur = a.get_mut(idx).ok_or_else(|| CliError::Config(format!("{path}: index {idx} out of range ({len})")))?;
        } else {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            }
            let obj = cur
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("{path}: {seg:?} is not inside an object")))?;
            cur = obj.entry(seg.to_string()).or_insert(Value::Null);
        }
        if last {
            *cur = value;
            return Ok(());
        }
    }
    Ok(())
}

/// Fills stage seeds the document leaves unset from the top-level seed.
fn propagate_seed(doc: &mut Value) {
    let Some(seed) = doc.get("seed").cloned() else { return };
    for (section, key) in [("stats", "seed"), ("rrf", "seed"), ("calibration", "split_seed")] {
        let obj = doc.as_object_mut().expect("object").entry(section).or_insert_with(|| Value::Object(Default::default()));
        if let Some(o) = obj.as_object_mut() {
            o.entry(key).or_insert(seed.clone());
        }
    }
}

impl RunConfig {
    pub fn from_value(mut doc: Value, overrides: &[String]) -> Result<Self, CliError> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if !doc.is_object() {
            return Err(CliError::Config("config must be a JSON object".into()));
        }
        propagate_seed(&mut doc);
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative input and output paths are resolved against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_value(doc, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.input.manifests.iter_mut().for_each(fix);
        self.input.taxonomy.iter_mut().for_each(fix);
        self.humanval.annotations.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        self.cache_dir.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |path: &str, msg: &str| Err(CliError::Config(format!("{path}: {msg}")));
        if self.families.is_empty() {
            return err("families", "at least one family is required");
        }
        if self.families.contains(&ContrastFamily::RepositionBrVsTl) {
            return err("families", "reposition_br_vs_tl is derived from reposition; list reposition instead");
        }
        if self.scorers.is_empty() {
            return err("scorers", "at least one scorer is required");
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.scorers.iter().enumerate() {
            let id = match s {
                ScorerConfig::Mock { id, .. } => id.clone(),
                ScorerConfig::External { bridge, .. } => {
                    if bridge.command.is_empty() {
                        return err(&format!("scorers.{i}.bridge.command"), "empty command");
                    }
                    format!("external#{i}")
                }
            };
            if !ids.insert(id.clone()) {
                return err(&format!("scorers.{i}.id"), "duplicate scorer id");
            }
            s.mock_spec()?;
        }
        if !self.scorers.iter().any(|s| s.role() == ScorerRole::Audited) {
            return err("scorers", "no audited scorer");
        }
        if self.input.manifests.is_empty() && self.input.synthetic.is_none() {
            return err("input", "give manifests or a synthetic corpus");
        }
        if !(0.0..=1.0).contains(&self.max_item_failure_rate) {
            return err("max_item_failure_rate", "must lie in [0, 1]");
        }
        if !(0.0..100.0).contains(&self.artifact_filter.q) {
            return err("artifact_filter.q", "must lie in [0, 100)");
        }
        if self.stats.n_resamples < 1000 {
            return err("stats.n_resamples", "at least 1000");
        }
        if self.rrf.n_boot < invariaudit_core::rrf::MIN_BOOT {
            return err("rrf.n_boot", "at least 1000");
        }
        if self.rrf.gaps_pct.is_empty() {
            return err("rrf.gaps_pct", "empty gap list");
        }
        self.calibration.validate().map_err(|e| CliError::Config(format!("calibration: {e}")))?;
        for (i, a) in self.perturb.rotation_angles.iter().enumerate() {
            PerturbationSpec::rotation(*a).map_err(|e| CliError::Config(format!("perturb.rotation_angles.{i}: {e}")))?;
        }
        for (i, s) in self.perturb.blur_sigmas.iter().enumerate() {
            PerturbationSpec::blur(*s).map_err(|e| CliError::Config(format!("perturb.blur_sigmas.{i}: {e}")))?;
        }
        Ok(())
    }

    /// Image perturbations implied by the enabled families.
    pub fn image_specs(&self) -> Vec<PerturbationSpec> {
        let mut out = Vec::new();
        for f in &self.families {
            match f {
                ContrastFamily::VerticalFlip => out.push(PerturbationSpec::VerticalFlip),
                ContrastFamily::HorizontalFlip => out.push(PerturbationSpec::HorizontalFlip),
                ContrastFamily::Rotation => out.extend(
                    self.perturb.rotation_angles.iter().filter_map(|a| PerturbationSpec::rotation(*a).ok()),
                ),
                ContrastFamily::Reposition => {
                    out.extend(self.perturb.anchors.iter().map(|a| PerturbationSpec::Reposition { anchor: *a }))
                }
                ContrastFamily::Blur => {
                    out.extend(self.perturb.blur_sigmas.iter().filter_map(|s| PerturbationSpec::blur(*s).ok()))
                }
                _ => {}
            }
        }
        out
    }

    pub fn modifier_families(&self) -> Vec<ModifierFamily> {
        ModifierFamily::ALL
            .into_iter()
            .filter(|m| self.families.contains(&ContrastFamily::from_modifier(*m)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "seed": 7,
            "input": {"synthetic": {"n_images": 10}},
            "families": ["vertical_flip"],
            "scorers": [{"kind": "mock", "id": "m", "preset": "spatial"}]
        })
    }

    #[test]
    fn seeds_propagate_and_overrides_win() {
        let c = RunConfig::from_value(minimal(), &["--stats.seed=2025".into()]).unwrap();
        assert_eq!(c.stats.seed, 2025);
        assert_eq!(c.rrf.seed, 7);
        assert_eq!(c.calibration.split_seed, 7);
    }

    #[test]
    fn errors_name_the_field() {
        let mut d = minimal();
        d["families"] = json!([]);
        let e = RunConfig::from_value(d, &[]).unwrap_err().to_string();
        assert!(e.contains("families"), "{e}");
        let mut d = minimal();
        d.as_object_mut().unwrap().remove("seed");
        assert!(RunConfig::from_value(d, &[]).unwrap_err().to_string().contains("seed"));
        let e = RunConfig::from_value(minimal(), &["--rrf.n_boot=\"many\"".into()]).unwrap_err().to_string();
        assert!(e.contains("rrf.n_boot"), "{e}");
    }

    #[test]
    fn mock_spec_overlay() {
        let mut d = minimal();
        d["scorers"][0]["spec"] = json!({"noise_sd": 0.0});
        let c = RunConfig::from_value(d, &[]).unwrap();
        let s = c.scorers[0].mock_spec().unwrap().unwrap();
        assert_eq!(s.noise_sd, 0.0);
        assert!(s.image_shifts.contains_key("vertical_flip"));
    }

    #[test]
    fn override_paths() {
        let mut v = json!({"a": {"b": [1, 2]}});
        apply_override(&mut v, "--a.b.1=5").unwrap();
        apply_override(&mut v, "a.c=hello").unwrap();
        assert_eq!(v, json!({"a": {"b": [1, 5], "c": "hello"}}));
        assert!(apply_override(&mut v, "a.b.9=1").is_err());
    }
}
