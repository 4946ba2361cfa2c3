//! Detection-manifest ingestion and single-object curation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::Mask;

/// Maximum IoU a dominant object may have with any other box.
pub const MAX_IOU: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("item {item_id}: {detail}")]
    Input { item_id: String, detail: String },
    #[error("coverage {0} outside (0, 1]")]
    Domain(f64),
    #[error("mapping file: {0}")]
    Mapping(String),
}

/// Axis-aligned pixel box `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn is_well_formed(&self, width: u32, height: u32) -> bool {
        let finite = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite());
        finite
            && self.x0 < self.x1
            && self.y0 < self.y1
            && self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x1 <= width as f64
            && self.y1 <= height as f64
    }
}

/// Row-major run-length mask: alternating runs starting with unset pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn encode(mask: &Mask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &bit in mask.bits() {
            if bit == current {
                run += 1;
            } else {
                counts.push(run);
                current = bit;
                run = 1;
            }
        }
        counts.push(run);
        Self { counts }
    }

    pub fn decode(&self, width: u32, height: u32) -> Option<Mask> {
        let total = width as usize * height as usize;
        let mut bits = Vec::with_capacity(total);
        let mut value = false;
        for &c in &self.counts {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        (bits.len() == total).then(|| Mask::from_bits(width, height, bits))
    }
}

/// One line of a detection manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub image_id: String,
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub boxes: Vec<BBox>,
    pub labels: Vec<String>,
    #[serde(default)]
    pub masks: Option<Vec<Option<RleMask>>>,
}

fn default_dataset() -> String {
    "unspecified".to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Person,
    Animal,
    Vehicle,
    Furniture,
    Kitchen,
    Sports,
    Electronics,
    Indoor,
    Outdoor,
    Appliance,
    Accessory,
    Unmapped,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::Person,
        Category::Animal,
        Category::Vehicle,
        Category::Furniture,
        Category::Kitchen,
        Category::Sports,
        Category::Electronics,
        Category::Indoor,
        Category::Outdoor,
        Category::Appliance,
        Category::Accessory,
        Category::Unmapped,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Person => "person",
            Category::Animal => "animal",
            Category::Vehicle => "vehicle",
            Category::Furniture => "furniture",
            Category::Kitchen => "kitchen",
            Category::Sports => "sports",
            Category::Electronics => "electronics",
            Category::Indoor => "indoor",
            Category::Outdoor => "outdoor",
            Category::Appliance => "appliance",
            Category::Accessory => "accessory",
            Category::Unmapped => "unmapped",
        }
    }

    pub fn is_animate(&self) -> bool {
        matches!(self, Category::Person | Category::Animal)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CatalogError::Mapping(format!("unknown category {s:?}")))
    }
}

/// Seven coverage strata in percent of image area.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBin {
    #[serde(rename = "0-10")]
    B0To10,
    #[serde(rename = "10-20")]
    B10To20,
    #[serde(rename = "20-35")]
    B20To35,
    #[serde(rename = "35-50")]
    B35To50,
    #[serde(rename = "50-70")]
    B50To70,
    #[serde(rename = "70-90")]
    B70To90,
    #[serde(rename = "90-100")]
    B90To100,
}

impl SizeBin {
    pub const ALL: [SizeBin; 7] = [
        SizeBin::B0To10,
        SizeBin::B10To20,
        SizeBin::B20To35,
        SizeBin::B35To50,
        SizeBin::B50To70,
        SizeBin::B70To90,
        SizeBin::B90To100,
    ];

    /// Lower edges as fractions; bin `i` is `[EDGES[i], EDGES[i+1])`, the last closed at 1.
    const EDGES: [f64; 8] = [0.0, 0.10, 0.20, 0.35, 0.50, 0.70, 0.90, 1.0];

    pub fn label(&self) -> &'static str {
        match self {
            SizeBin::B0To10 => "0-10",
            SizeBin::B10To20 => "10-20",
            SizeBin::B20To35 => "20-35",
            SizeBin::B35To50 => "35-50",
            SizeBin::B50To70 => "50-70",
            SizeBin::B70To90 => "70-90",
            SizeBin::B90To100 => "90-100",
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        let i = *self as usize;
        (Self::EDGES[i], Self::EDGES[i + 1])
    }
}

impl fmt::Display for SizeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Bin for a coverage fraction in `(0, 1]`; bins are left-closed, the last one also right-closed.
pub fn coverage_bin(coverage: f64) -> Result<SizeBin, CatalogError> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(CatalogError::Domain(coverage));
    }
    let idx = SizeBin::EDGES[1..7].iter().take_while(|&&edge| coverage >= edge).count();
    Ok(SizeBin::ALL[idx])
}

/// Source label → harmonized category lookup, versioned by the hash of its canonical JSON.
#[derive(Clone, Debug)]
pub struct TaxonomyMap {
    entries: BTreeMap<String, Category>,
    hash: String,
}

impl TaxonomyMap {
    pub fn from_entries(entries: BTreeMap<String, Category>) -> Self {
        let entries: BTreeMap<String, Category> =
            entries.into_iter().map(|(k, v)| (normalize_label(&k), v)).collect();
        let canonical = serde_json::to_vec(&entries).expect("map serializes");
        let hash = crate::sha256_hex(&canonical);
        Self { entries, hash }
    }

    /// Parses `{source_label: category}` JSON.
    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| CatalogError::Mapping(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (label, cat) in raw {
            entries.insert(label, cat.parse()?);
        }
        Ok(Self::from_entries(entries))
    }

    /// The bundled COCO-style mapping.
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/taxonomy.json")).expect("bundled taxonomy parses")
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn harmonize(&self, source_label: &str) -> Category {
        harmonize_category(source_label, self)
    }
}

fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Total lookup: unknown labels fall into [`Category::Unmapped`].
pub fn harmonize_category(source_label: &str, mapping: &TaxonomyMap) -> Category {
    mapping
        .entries
        .get(&normalize_label(source_label))
        .copied()
        .unwrap_or(Category::Unmapped)
}

/// One curated audit unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub dataset: String,
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    pub label: String,
    pub category: Category,
    pub bbox: BBox,
    pub object_mask: RleMask,
    /// True when no segmentation was supplied and the box rectangle stands in for the mask.
    pub mask_from_bbox: bool,
    /// Other boxes in the image, used as salient regions during repositioning.
    pub other_boxes: Vec<BBox>,
    pub coverage: f64,
    pub size_bin: SizeBin,
    pub taxonomy_hash: String,
    #[serde(default)]
    pub captions: BTreeMap<String, String>,
}

impl ItemRecord {
    pub fn mask(&self) -> Mask {
        self.object_mask
            .decode(self.width, self.height)
            .expect("item mask matches image size")
    }

    /// Union of the other boxes as a mask (empty when there are none).
    pub fn salient_mask(&self) -> Mask {
        let mut m = Mask::new(self.width, self.height);
        for b in &self.other_boxes {
            m.fill_box(b);
        }
        m
    }
}

/// A rejection log line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub item_id: String,
    pub rule: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Curation {
    Accepted(Box<ItemRecord>),
    Rejected(Rejection),
}

/// Applies the single-object filter to one detection record.
///
/// A box is a candidate when its IoU with every other box is below [`MAX_IOU`]; the largest
/// candidate is dominant. Equal-area top candidates are rejected as ambiguous.
pub fn filter_single_object(
    det: &RawDetection,
    mapping: &TaxonomyMap,
) -> Result<Curation, CatalogError> {
    let input_err = |detail: String| CatalogError::Input { item_id: det.image_id.clone(), detail };
    if det.width == 0 || det.height == 0 {
        return Err(input_err("zero image dimension".into()));
    }
    if det.boxes.is_empty() {
        return Err(input_err("no boxes".into()));
    }
    if det.boxes.len() != det.labels.len() {
        return Err(input_err(format!(
            "{} boxes but {} labels",
            det.boxes.len(),
            det.labels.len()
        )));
    }
    if let Some(masks) = &det.masks {
        if masks.len() != det.boxes.len() {
            return Err(input_err("masks not aligned with boxes".into()));
        }
    }
    for (i, b) in det.boxes.iter().enumerate() {
        if !b.is_well_formed(det.width, det.height) {
            return Err(input_err(format!("box {i} malformed or out of bounds: {b:?}")));
        }
    }

    let reject = |rule: &str, detail: String| {
        Ok(Curation::Rejected(Rejection {
            item_id: det.image_id.clone(),
            rule: rule.to_string(),
            detail,
        }))
    };

    let n = det.boxes.len();
    let candidates: Vec<usize> = (0..n)
        .filter(|&i| (0..n).all(|j| j == i || det.boxes[i].iou(&det.boxes[j]) < MAX_IOU))
        .collect();
    if candidates.is_empty() {
        let max_iou = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| det.boxes[i].iou(&det.boxes[j]))
            .fold(0.0, f64::max);
        return reject("overlap", format!("max pairwise IoU {max_iou:.4} >= {MAX_IOU}"));
    }
    let best_area = candidates.iter().map(|&i| det.boxes[i].area()).fold(0.0, f64::max);
    let top: Vec<usize> =
        candidates.iter().copied().filter(|&i| det.boxes[i].area() == best_area).collect();
    if top.len() > 1 {
        return reject("ambiguous", format!("{} candidates share the largest area", top.len()));
    }
    let dom = top[0];
    let bbox = det.boxes[dom];
    let image_area = det.width as f64 * det.height as f64;
    let coverage = bbox.area() / image_area;
    if coverage <= 0.0 {
        return reject("coverage", "dominant box has zero area".into());
    }
    let size_bin = coverage_bin(coverage)?;

    let supplied = det.masks.as_ref().and_then(|m| m[dom].as_ref());
    let (mask, mask_from_bbox) = match supplied {
        Some(rle) => {
            let m = rle
                .decode(det.width, det.height)
                .ok_or_else(|| input_err(format!("mask {dom} does not match image size")))?;
            if m.area() == 0 {
                return reject("mask", "dominant mask is empty".into());
            }
            (rle.clone(), false)
        }
        None => {
            let mut m = Mask::new(det.width, det.height);
            m.fill_box(&bbox);
            (RleMask::encode(&m), true)
        }
    };

    let label = det.labels[dom].clone();
    let other_boxes = (0..n).filter(|&i| i != dom).map(|i| det.boxes[i]).collect();
    Ok(Curation::Accepted(Box::new(ItemRecord {
        item_id: det.image_id.clone(),
        dataset: det.dataset.clone(),
        image_path: det.image_path.clone(),
        width: det.width,
        height: det.height,
        category: mapping.harmonize(&label),
        label,
        bbox,
        object_mask: mask,
        mask_from_bbox,
        other_boxes,
        coverage,
        size_bin,
        taxonomy_hash: mapping.hash().to_string(),
        captions: BTreeMap::new(),
    })))
}

/// Output of curating a whole manifest; items are sorted by `item_id`.
#[derive(Clone, Debug, Default)]
pub struct CurationOutcome {
    pub items: Vec<ItemRecord>,
    pub rejections: Vec<Rejection>,
}

/// Curates every detection. Malformed records become `input` rejections rather than aborting.
pub fn curate(dets: &[RawDetection], mapping: &TaxonomyMap) -> CurationOutcome {
    let mut out = CurationOutcome::default();
    for det in dets {
        match filter_single_object(det, mapping) {
            Ok(Curation::Accepted(item)) => out.items.push(*item),
            Ok(Curation::Rejected(r)) => out.rejections.push(r),
            Err(e) => out.rejections.push(Rejection {
                item_id: det.image_id.clone(),
                rule: "input".into(),
                detail: e.to_string(),
            }),
        }
    }
    out.items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    out.rejections.sort_by(|a, b| a.item_id.cmp(&b.item_id).then(a.rule.cmp(&b.rule)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(boxes: Vec<BBox>) -> RawDetection {
        let labels = boxes.iter().map(|_| "dog".to_string()).collect();
        RawDetection {
            image_id: "img".into(),
            image_path: "img.png".into(),
            width: 100,
            height: 100,
            dataset: "test".into(),
            boxes,
            labels,
            masks: None,
        }
    }

    fn accepted(c: Curation) -> ItemRecord {
        match c {
            Curation::Accepted(i) => *i,
            Curation::Rejected(r) => panic!("rejected: {r:?}"),
        }
    }

    #[test]
    fn single_box_is_dominant() {
        let b = BBox::new(10.0, 10.0, 30.0, 40.0);
        let item = accepted(filter_single_object(&det(vec![b]), &TaxonomyMap::builtin()).unwrap());
        assert_eq!(item.bbox, b);
        assert_eq!(item.category, Category::Animal);
        assert!(item.mask_from_bbox);
        assert_eq!(item.mask().area(), 600);
        assert!((item.coverage - 0.06).abs() < 1e-12);
    }

    #[test]
    fn overlapping_pair_is_rejected() {
        // 300-px boxes sharing 200 px: IoU = 200 / 400.
        let a = BBox::new(0.0, 0.0, 30.0, 10.0);
        let b = BBox::new(10.0, 0.0, 40.0, 10.0);
        assert!((a.iou(&b) - 0.5).abs() < 1e-12);
        match filter_single_object(&det(vec![a, b]), &TaxonomyMap::builtin()).unwrap() {
            Curation::Rejected(r) => assert_eq!(r.rule, "overlap"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_box_is_input_error() {
        let bad = BBox::new(20.0, 10.0, 5.0, 40.0);
        let err = filter_single_object(&det(vec![bad]), &TaxonomyMap::builtin()).unwrap_err();
        assert!(matches!(err, CatalogError::Input { ref item_id, .. } if item_id == "img"));
        let out_of_bounds = BBox::new(90.0, 10.0, 120.0, 40.0);
        assert!(filter_single_object(&det(vec![out_of_bounds]), &TaxonomyMap::builtin()).is_err());
    }

    #[test]
    fn equal_area_candidates_are_ambiguous() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(50.0, 50.0, 60.0, 60.0);
        match filter_single_object(&det(vec![a, b]), &TaxonomyMap::builtin()).unwrap() {
            Curation::Rejected(r) => assert_eq!(r.rule, "ambiguous"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coverage_bins_examples() {
        assert_eq!(coverage_bin(0.55).unwrap().label(), "50-70");
        assert_eq!(coverage_bin(1.0).unwrap().label(), "90-100");
        assert_eq!(coverage_bin(0.10).unwrap().label(), "10-20");
        assert!(matches!(coverage_bin(0.0), Err(CatalogError::Domain(_))));
        assert!(coverage_bin(1.0000001).is_err());
        assert!(coverage_bin(f64::NAN).is_err());
    }

    #[test]
    fn harmonization_examples() {
        let m = TaxonomyMap::builtin();
        assert_eq!(harmonize_category("dog", &m), Category::Animal);
        assert_eq!(harmonize_category("sofa", &m), Category::Furniture);
        assert_eq!(harmonize_category("couch", &m), Category::Furniture);
        assert_eq!(harmonize_category("drone", &m), Category::Unmapped);
        assert_eq!(harmonize_category("  Dog ", &m), Category::Animal);
    }

    #[test]
    fn mapping_hash_is_content_addressed() {
        let a = TaxonomyMap::from_json(r#"{"dog":"animal","car":"vehicle"}"#).unwrap();
        let b = TaxonomyMap::from_json(r#"{"car":"vehicle","dog":"animal"}"#).unwrap();
        let c = TaxonomyMap::from_json(r#"{"dog":"person","car":"vehicle"}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert!(TaxonomyMap::from_json(r#"{"dog":"wolfish"}"#).is_err());
    }

    #[test]
    fn supplied_mask_is_used() {
        let mut d = det(vec![BBox::new(10.0, 10.0, 20.0, 20.0)]);
        let mut m = Mask::new(100, 100);
        m.set(12, 12, true);
        m.set(13, 12, true);
        d.masks = Some(vec![Some(RleMask::encode(&m))]);
        let item = accepted(filter_single_object(&d, &TaxonomyMap::builtin()).unwrap());
        assert!(!item.mask_from_bbox);
        assert_eq!(item.mask(), m);
    }

    #[test]
    fn curate_sorts_and_logs() {
        let mut d1 = det(vec![BBox::new(0.0, 0.0, 10.0, 10.0)]);
        d1.image_id = "b".into();
        let mut d2 = det(vec![BBox::new(0.0, 0.0, 10.0, 10.0)]);
        d2.image_id = "a".into();
        let mut d3 = det(vec![BBox::new(5.0, 0.0, 1.0, 10.0)]);
        d3.image_id = "c".into();
        let out = curate(&[d1, d2, d3], &TaxonomyMap::builtin());
        assert_eq!(out.items.iter().map(|i| i.item_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(out.rejections.len(), 1);
        assert_eq!(out.rejections[0].rule, "input");
    }
}
