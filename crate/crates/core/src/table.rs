//! Score tables and paired contrasts shared by the analysis stages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::captiongen::{CaptionSet, ModifierFamily};
use crate::perturb::{Anchor, PerturbationSpec};

pub const ORIGINAL_IMAGE: &str = "orig";
pub const BASE_CAPTION: &str = "base";

/// One image–caption pair of an item: an image variant key (`orig` or a perturbation key)
/// and a caption key (`base`, `modifier:X`, `neutral:Y`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub image: String,
    pub caption: String,
}

impl PairKey {
    pub fn new(image: impl Into<String>, caption: impl Into<String>) -> Self {
        Self { image: image.into(), caption: caption.into() }
    }

    pub fn original() -> Self {
        Self::new(ORIGINAL_IMAGE, BASE_CAPTION)
    }

    pub fn is_original_image(&self) -> bool {
        self.image == ORIGINAL_IMAGE
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.image, self.caption)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Spatial,
    Societal,
}

impl Axis {
    pub const ALL: [Axis; 2] = [Axis::Spatial, Axis::Societal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Spatial => "spatial",
            Axis::Societal => "societal",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastFamily {
    VerticalFlip,
    HorizontalFlip,
    Rotation,
    Reposition,
    /// Bottom-right against top-left placement; reported, not calibrated.
    RepositionBrVsTl,
    /// Low-level control; reported, not calibrated.
    Blur,
    Cultural,
    Economic,
    Gender,
    Emotion,
    Sociopolitical,
}

impl ContrastFamily {
    pub const ALL: [ContrastFamily; 11] = [
        ContrastFamily::VerticalFlip,
        ContrastFamily::HorizontalFlip,
        ContrastFamily::Rotation,
        ContrastFamily::Reposition,
        ContrastFamily::RepositionBrVsTl,
        ContrastFamily::Blur,
        ContrastFamily::Cultural,
        ContrastFamily::Economic,
        ContrastFamily::Gender,
        ContrastFamily::Emotion,
        ContrastFamily::Sociopolitical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ContrastFamily::VerticalFlip => "vertical_flip",
            ContrastFamily::HorizontalFlip => "horizontal_flip",
            ContrastFamily::Rotation => "rotation",
            ContrastFamily::Reposition => "reposition",
            ContrastFamily::RepositionBrVsTl => "reposition_br_vs_tl",
            ContrastFamily::Blur => "blur",
            ContrastFamily::Cultural => "cultural",
            ContrastFamily::Economic => "economic",
            ContrastFamily::Gender => "gender",
            ContrastFamily::Emotion => "emotion",
            ContrastFamily::Sociopolitical => "sociopolitical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }

    /// Calibration axis, if the family is one of the audited nuisance families.
    pub fn axis(&self) -> Option<Axis> {
        match self {
            ContrastFamily::VerticalFlip
            | ContrastFamily::HorizontalFlip
            | ContrastFamily::Rotation
            | ContrastFamily::Reposition => Some(Axis::Spatial),
            ContrastFamily::RepositionBrVsTl | ContrastFamily::Blur => None,
            _ => Some(Axis::Societal),
        }
    }

    pub fn from_spec(spec: &PerturbationSpec) -> Self {
        match spec {
            PerturbationSpec::VerticalFlip => ContrastFamily::VerticalFlip,
            PerturbationSpec::HorizontalFlip => ContrastFamily::HorizontalFlip,
            PerturbationSpec::Rotation { .. } => ContrastFamily::Rotation,
            PerturbationSpec::Reposition { .. } => ContrastFamily::Reposition,
            PerturbationSpec::Blur { .. } => ContrastFamily::Blur,
        }
    }

    pub fn from_modifier(family: ModifierFamily) -> Self {
        match family {
            ModifierFamily::Cultural => ContrastFamily::Cultural,
            ModifierFamily::Economic => ContrastFamily::Economic,
            ModifierFamily::Gender => ContrastFamily::Gender,
            ModifierFamily::Emotion => ContrastFamily::Emotion,
            ModifierFamily::Sociopolitical => ContrastFamily::Sociopolitical,
        }
    }
}

impl fmt::Display for ContrastFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A paired comparison within one item: `perturbed` scored against `reference`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Contrast {
    pub family: ContrastFamily,
    /// Transform within the family, e.g. `rotation:+5`, `reposition:TL`, `African`.
    pub level: String,
    pub reference: PairKey,
    pub perturbed: PairKey,
}

impl Contrast {
    pub fn axis(&self) -> Option<Axis> {
        self.family.axis()
    }
}

/// Contrasts available for one item given its materialized image variants and caption set.
pub fn item_contrasts(specs: &[PerturbationSpec], captions: Option<&CaptionSet>) -> Vec<Contrast> {
    let mut out = Vec::new();
    for spec in specs {
        out.push(Contrast {
            family: ContrastFamily::from_spec(spec),
            level: spec.key(),
            reference: PairKey::original(),
            perturbed: PairKey::new(spec.key(), BASE_CAPTION),
        });
    }
    let tl = PerturbationSpec::Reposition { anchor: Anchor::TL };
    let br = PerturbationSpec::Reposition { anchor: Anchor::BR };
    if specs.contains(&tl) && specs.contains(&br) {
        out.push(Contrast {
            family: ContrastFamily::RepositionBrVsTl,
            level: "BR-TL".into(),
            reference: PairKey::new(tl.key(), BASE_CAPTION),
            perturbed: PairKey::new(br.key(), BASE_CAPTION),
        });
    }
    if let Some(set) = captions {
        for v in &set.variants {
            if let (Some(fam), Some(neutral)) = (v.family, &v.length_matched_to) {
                let level = v.key.strip_prefix("modifier:").unwrap_or(&v.key).to_string();
                out.push(Contrast {
                    family: ContrastFamily::from_modifier(fam),
                    level,
                    reference: PairKey::new(ORIGINAL_IMAGE, neutral.clone()),
                    perturbed: PairKey::new(ORIGINAL_IMAGE, v.key.clone()),
                });
            }
        }
    }
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub item_id: String,
    pub image: String,
    pub caption: String,
    pub score: f64,
}

/// Scores of one scorer over (item, pair) keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub scorer_id: String,
    pub range: (f64, f64),
    scores: BTreeMap<(String, PairKey), f64>,
}

impl ScoreTable {
    pub fn new(scorer_id: impl Into<String>, range: (f64, f64)) -> Self {
        Self { scorer_id: scorer_id.into(), range, scores: BTreeMap::new() }
    }

    pub fn insert(&mut self, item_id: &str, key: PairKey, score: f64) {
        self.scores.insert((item_id.to_string(), key), score);
    }

    pub fn get(&self, item_id: &str, key: &PairKey) -> Option<f64> {
        self.scores.get(&(item_id.to_string(), key.clone())).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn range_width(&self) -> f64 {
        self.range.1 - self.range.0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PairKey, f64)> {
        self.scores.iter().map(|((i, k), s)| (i.as_str(), k, *s))
    }

    pub fn item_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.scores.keys().map(|(i, _)| i.clone()).collect();
        ids.dedup();
        ids
    }

    /// `(reference, perturbed)` scores of a contrast, when both sides are present.
    pub fn pair(&self, item_id: &str, c: &Contrast) -> Option<(f64, f64)> {
        Some((self.get(item_id, &c.reference)?, self.get(item_id, &c.perturbed)?))
    }

    /// Same keys, scores mapped through `f(item_id, key, score)`.
    pub fn map(&self, mut f: impl FnMut(&str, &PairKey, f64) -> f64) -> ScoreTable {
        let scores = self.scores.iter().map(|((i, k), s)| ((i.clone(), k.clone()), f(i, k, *s))).collect();
        ScoreTable { scorer_id: self.scorer_id.clone(), range: self.range, scores }
    }

    pub fn rows(&self) -> Vec<ScoreRow> {
        self.iter()
            .map(|(i, k, s)| ScoreRow {
                item_id: i.to_string(),
                image: k.image.clone(),
                caption: k.caption.clone(),
                score: s,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captiongen::{caption_set, Lexicon};
    use crate::catalog::Category;

    #[test]
    fn contrasts_cover_specs_and_modifiers() {
        let lex = Lexicon::builtin();
        let set = caption_set(&lex, "car", Category::Vehicle, &[ModifierFamily::Economic]).unwrap();
        let cs = item_contrasts(&PerturbationSpec::standard_set(), Some(&set));
        // 12 image specs, BR-vs-TL, 4 economic modifiers.
        assert_eq!(cs.len(), 17);
        let exp = cs.iter().find(|c| c.level == "expensive").unwrap();
        assert_eq!(exp.reference, PairKey::new("orig", "neutral:typical"));
        assert_eq!(exp.perturbed, PairKey::new("orig", "modifier:expensive"));
        assert_eq!(exp.axis(), Some(Axis::Societal));
        assert!(cs.iter().any(|c| c.family == ContrastFamily::RepositionBrVsTl && c.axis().is_none()));
    }

    #[test]
    fn table_map_keeps_keys() {
        let mut t = ScoreTable::new("m", (0.0, 1.0));
        t.insert("a", PairKey::original(), 0.5);
        t.insert("a", PairKey::new("vertical_flip", "base"), 0.6);
        let u = t.map(|_, k, s| if k.is_original_image() { s } else { s - 0.1 });
        assert_eq!(u.get("a", &PairKey::original()), Some(0.5));
        assert!((u.get("a", &PairKey::new("vertical_flip", "base")).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(t.item_ids(), vec!["a".to_string()]);
    }
}
