//! Deterministic synthetic scorers with planted sensitivities.
//!
//! A mock score is a pure function of (image content hash, caption). The provenance
//! registry maps content hashes back to the item and image variant they were rendered for,
//! which selects the planted image shift. Caption shifts are keyed by modifier words found
//! in the caption.
//!
//! For item quality `u ∈ [-1, 1]` (shared by every mock) the reference score is
//! `s0 = base + spread·u + item_noise_sd·z_item`. A pair scores
//! `s0·(1 + Σ pct/100) + Σ abs + noise_sd·z_pair`, clamped to `[0, 1]`, where `z_pair` is a
//! standard normal truncated at ±3 seeded by (seed, image hash, caption). The canonical pair
//! (original image, base caption) carries no pair noise.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::valence::{NEGATIVE_POLE, POSITIVE_POLE};
use super::{Capabilities, ImageRef, ScoreError, Scorer};
use crate::rng::{label_unit, AuditRng};
use crate::table::ORIGINAL_IMAGE;

pub const EMBED_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedShift {
    /// Percent of the item's reference score.
    Pct(f64),
    /// Raw score units.
    Abs(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub item_id: String,
    /// `orig` or a perturbation key.
    pub image_key: String,
    pub base_caption: Option<String>,
}

/// Content hash → provenance, shared between the pipeline and the mocks.
#[derive(Clone, Debug, Default)]
pub struct ProvenanceRegistry {
    inner: Arc<RwLock<BTreeMap<String, Provenance>>>,
}

impl ProvenanceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// First registration of a hash wins.
    pub fn register(&self, sha256: &str, p: Provenance) {
        self.inner.write().expect("registry lock").entry(sha256.to_string()).or_insert(p);
    }

    pub fn get(&self, sha256: &str) -> Option<Provenance> {
        self.inner.read().expect("registry lock").get(sha256).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSpec {
    pub id: String,
    pub base: f64,
    pub spread: f64,
    pub noise_sd: f64,
    /// Item-level deviation from the shared quality, so two mocks do not rank items
    /// identically.
    pub item_noise_sd: f64,
    pub seed: u64,
    /// Keyed by perturbation key (`rotation:+5`) or family name (`rotation`); the key wins.
    pub image_shifts: BTreeMap<String, PlantedShift>,
    /// Keyed by modifier word, matched case-insensitively as a whole word.
    pub caption_shifts: BTreeMap<String, PlantedShift>,
}

impl Default for MockSpec {
    fn default() -> Self {
        Self {
            id: "mock".into(),
            base: 0.6,
            spread: 0.15,
            noise_sd: 0.0,
            item_noise_sd: 0.0,
            seed: 2025,
            image_shifts: BTreeMap::new(),
            caption_shifts: BTreeMap::new(),
        }
    }
}

fn shifts(entries: &[(&str, PlantedShift)]) -> BTreeMap<String, PlantedShift> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl MockSpec {
    /// No planted shifts and no noise.
    pub fn invariant(id: &str) -> Self {
        Self { id: id.into(), ..Default::default() }
    }

    /// Planted spatial sensitivities at realistic magnitudes: flips +6.9%, rotation +5.1%,
    /// every reposition anchor +8.4%, blur untouched.
    pub fn spatial(id: &str) -> Self {
        Self {
            id: id.into(),
            noise_sd: 0.005,
            image_shifts: shifts(&[
                ("vertical_flip", PlantedShift::Pct(6.9)),
                ("horizontal_flip", PlantedShift::Pct(6.9)),
                ("rotation", PlantedShift::Pct(5.1)),
                ("reposition", PlantedShift::Pct(8.4)),
            ]),
            ..Default::default()
        }
    }

    /// Planted framing sensitivities: African −7%, American +1.2%, cheap +2%, expensive −6.2%.
    pub fn framing(id: &str) -> Self {
        Self {
            id: id.into(),
            noise_sd: 0.005,
            caption_shifts: shifts(&[
                ("african", PlantedShift::Pct(-7.0)),
                ("american", PlantedShift::Pct(1.2)),
                ("cheap", PlantedShift::Pct(2.0)),
                ("expensive", PlantedShift::Pct(-6.2)),
            ]),
            ..Default::default()
        }
    }

    /// Spatial and framing sensitivities together.
    pub fn combined(id: &str) -> Self {
        let mut s = Self::spatial(id);
        s.caption_shifts = Self::framing(id).caption_shifts;
        s
    }

    /// Independent reference evaluators: their own item-level noise and a fraction of the
    /// spatial shifts of [`MockSpec::spatial`]. `which` selects one of two seeds/profiles.
    pub fn reference(id: &str, which: u8) -> Self {
        let (base, seed, share) = if which == 0 { (0.55, 7001, 0.8) } else { (0.5, 7002, 0.7) };
        let spatial = Self::spatial(id);
        Self {
            id: id.into(),
            base,
            spread: 0.12,
            noise_sd: 0.01,
            item_noise_sd: 0.02,
            seed,
            image_shifts: spatial
                .image_shifts
                .into_iter()
                .map(|(k, v)| match v {
                    PlantedShift::Pct(p) => (k, PlantedShift::Pct(p * share)),
                    PlantedShift::Abs(a) => (k, PlantedShift::Abs(a * share)),
                })
                .collect(),
            caption_shifts: BTreeMap::new(),
        }
    }

    pub fn preset(name: &str, id: &str) -> Option<Self> {
        Some(match name {
            "invariant" => Self::invariant(id),
            "spatial" => Self::spatial(id),
            "framing" => Self::framing(id),
            "combined" => Self::combined(id),
            "reference_a" => Self::reference(id, 0),
            "reference_b" => Self::reference(id, 1),
            _ => return None,
        })
    }
}

/// Shared per-item quality in `[-1, 1]`.
pub fn item_quality(item_id: &str) -> f64 {
    label_unit(&format!("quality|{item_id}"))
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn truncated_normal(rng: &mut AuditRng) -> f64 {
    loop {
        let z = rng.normal();
        if z.abs() <= 3.0 {
            return z;
        }
    }
}

#[derive(Clone, Debug)]
pub struct MockScorer {
    spec: MockSpec,
    registry: ProvenanceRegistry,
}

impl MockScorer {
    pub fn new(spec: MockSpec, registry: ProvenanceRegistry) -> Self {
        Self { spec, registry }
    }

    pub fn spec(&self) -> &MockSpec {
        &self.spec
    }

    fn reference_score(&self, item_id: &str) -> f64 {
        let mut s0 = self.spec.base + self.spec.spread * item_quality(item_id);
        if self.spec.item_noise_sd > 0.0 {
            let mut rng = AuditRng::keyed(self.spec.seed, &format!("item|{item_id}"));
            s0 += self.spec.item_noise_sd * truncated_normal(&mut rng);
        }
        s0
    }

    fn image_shift(&self, image_key: &str) -> Option<PlantedShift> {
        if image_key == ORIGINAL_IMAGE {
            return None;
        }
        let family = image_key.split(':').next().unwrap_or(image_key);
        self.spec.image_shifts.get(image_key).or_else(|| self.spec.image_shifts.get(family)).copied()
    }

    /// Score from provenance and caption alone; `score` looks the provenance up by hash.
    pub fn score_for(&self, sha256: &str, prov: Option<&Provenance>, caption: &str) -> f64 {
        let (item_id, image_key) = match prov {
            Some(p) => (p.item_id.as_str(), p.image_key.as_str()),
            None => (sha256, ORIGINAL_IMAGE),
        };
        let s0 = self.reference_score(item_id);
        let mut pct = 0.0;
        let mut abs = 0.0;
        let mut apply = |s: PlantedShift| match s {
            PlantedShift::Pct(p) => pct += p,
            PlantedShift::Abs(a) => abs += a,
        };
        if let Some(s) = self.image_shift(image_key) {
            apply(s);
        }
        for w in words(caption) {
            if let Some(s) = self.spec.caption_shifts.get(&w) {
                apply(*s);
            }
        }
        let mut score = s0 * (1.0 + pct / 100.0) + abs;
        let canonical = image_key == ORIGINAL_IMAGE
            && prov.and_then(|p| p.base_caption.as_deref()) == Some(caption);
        if self.spec.noise_sd > 0.0 && !canonical {
            let mut rng = AuditRng::keyed(self.spec.seed, &format!("pair|{sha256}|{caption}"));
            score += self.spec.noise_sd * truncated_normal(&mut rng);
        }
        score.clamp(0.0, 1.0)
    }

    fn valence(&self, word: &str) -> Option<f64> {
        if POSITIVE_POLE.contains(&word) {
            return Some(1.0);
        }
        if NEGATIVE_POLE.contains(&word) {
            return Some(-1.0);
        }
        match self.spec.caption_shifts.get(word) {
            Some(PlantedShift::Pct(p)) => Some(p / 10.0),
            Some(PlantedShift::Abs(a)) => Some(a * 10.0),
            None => None,
        }
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut v = vec![0.0; EMBED_DIM];
        let pole = POSITIVE_POLE.contains(&word) || NEGATIVE_POLE.contains(&word);
        v[0] = self.valence(word).unwrap_or(0.0);
        if !pole {
            let mut rng = AuditRng::keyed(self.spec.seed, &format!("embed|{word}"));
            for c in v.iter_mut().skip(1) {
                *c = rng.uniform(-0.3, 0.3);
            }
        }
        v
    }
}

impl Scorer for MockScorer {
    fn id(&self) -> &str {
        &self.spec.id
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { score: true, embed_text: true }
    }

    fn score(&self, image: &ImageRef, caption: &str) -> Result<f64, ScoreError> {
        if caption.trim().is_empty() {
            return Err(ScoreError::InvalidInput("empty caption".into()));
        }
        let prov = self.registry.get(&image.sha256);
        Ok(self.score_for(&image.sha256, prov.as_ref(), caption))
    }

    /// Mean of word vectors. Pole words sit at ±e0; other words carry their valence (from
    /// the planted caption shifts, else 0) on e0 plus a fixed pseudo-random component.
    fn embed_text(&self, caption: &str) -> Result<Vec<f64>, ScoreError> {
        let ws = words(caption);
        if ws.is_empty() {
            return Err(ScoreError::InvalidInput("empty caption".into()));
        }
        let mut acc = vec![0.0; EMBED_DIM];
        for w in &ws {
            for (a, v) in acc.iter_mut().zip(self.word_vector(w)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= ws.len() as f64);
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(sha: &str) -> ImageRef {
        ImageRef { path: "x.png".into(), sha256: sha.into() }
    }

    #[test]
    fn planted_absolute_shift_plus_bounded_noise() {
        let reg = ProvenanceRegistry::new();
        let base = "There is a bed.";
        let prov = |k: &str| Provenance { item_id: "it".into(), image_key: k.into(), base_caption: Some(base.into()) };
        reg.register("h0", prov("orig"));
        reg.register("h1", prov("vertical_flip"));
        let mut spec = MockSpec::invariant("m");
        spec.noise_sd = 0.004;
        spec.image_shifts.insert("vertical_flip".into(), PlantedShift::Abs(0.05));
        let m = MockScorer::new(spec, reg);
        let s0 = m.score(&img("h0"), base).unwrap();
        let s1 = m.score(&img("h1"), base).unwrap();
        assert!(((s1 - s0) - 0.05).abs() <= 3.0 * 0.004);
        assert_eq!(s1, m.score(&img("h1"), base).unwrap());
    }

    #[test]
    fn invariant_mock_has_no_shift() {
        let reg = ProvenanceRegistry::new();
        reg.register("a", Provenance { item_id: "i".into(), image_key: "orig".into(), base_caption: None });
        reg.register("b", Provenance { item_id: "i".into(), image_key: "rotation:+5".into(), base_caption: None });
        let m = MockScorer::new(MockSpec::invariant("inv"), reg);
        assert_eq!(m.score(&img("a"), "There is a cat.").unwrap(), m.score(&img("b"), "There is a cat.").unwrap());
        assert_eq!(
            m.score(&img("a"), "There is an African cat.").unwrap(),
            m.score(&img("a"), "There is a typical cat.").unwrap()
        );
    }

    #[test]
    fn relative_caption_shift() {
        let reg = ProvenanceRegistry::new();
        reg.register("a", Provenance { item_id: "i".into(), image_key: "orig".into(), base_caption: None });
        let mut spec = MockSpec::framing("f");
        spec.noise_sd = 0.0;
        let m = MockScorer::new(spec, reg);
        let n = m.score(&img("a"), "There is a typical bed.").unwrap();
        let e = m.score(&img("a"), "There is an expensive bed.").unwrap();
        assert!((100.0 * (e - n) / n - (-6.2)).abs() < 1e-9);
    }

    #[test]
    fn embeddings() {
        let m = MockScorer::new(MockSpec::framing("f"), ProvenanceRegistry::new());
        assert_eq!(m.embed_text("good").unwrap()[0], 1.0);
        assert_eq!(m.embed_text("awful").unwrap()[0], -1.0);
        assert_eq!(m.embed_text("African").unwrap(), m.embed_text("African").unwrap());
        assert!(m.embed_text("  ").is_err());
    }
}
