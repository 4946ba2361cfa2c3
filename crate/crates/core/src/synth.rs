//! Synthetic detection corpus: small rendered scenes with one dominant object, written as
//! PNG files plus a detection manifest. Used for offline runs and tests; not real data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{BBox, RawDetection, RleMask};
use crate::perturb::{Frame, Mask, PerturbError};
use crate::rng::AuditRng;

pub const LABELS: [&str; 8] = ["chair", "couch", "car", "bus", "dog", "cat", "person", "bed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_images: usize,
    pub width: u32,
    pub height: u32,
    /// Coverage of the dominant object's box, sampled uniformly.
    pub min_coverage: f64,
    pub max_coverage: f64,
    /// Chance of one small extra object away from the dominant one.
    pub distractor_rate: f64,
    /// Chance of a second object overlapping the first, which curation rejects.
    pub clutter_rate: f64,
    pub seed: u64,
    pub dataset: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_images: 120,
            width: 64,
            height: 64,
            min_coverage: 0.03,
            max_coverage: 0.3,
            distractor_rate: 0.15,
            clutter_rate: 0.05,
            seed: 2025,
            dataset: "synthetic".into(),
        }
    }
}

struct Scene {
    frame: Frame,
    boxes: Vec<BBox>,
    labels: Vec<String>,
    masks: Vec<Mask>,
}

fn ellipse_mask(w: u32, h: u32, b: &BBox) -> Mask {
    let (cx, cy) = ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0);
    let (rx, ry) = ((b.x1 - b.x0) / 2.0, (b.y1 - b.y0) / 2.0);
    Mask::from_fn(w, h, |x, y| {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    })
}

fn random_box(rng: &mut AuditRng, w: u32, h: u32, coverage: f64) -> BBox {
    let area = coverage * (w * h) as f64;
    let aspect = rng.uniform(0.7, 1.4);
    let bw = (area * aspect).sqrt().round().clamp(3.0, w as f64 - 2.0);
    let bh = (area / bw).round().clamp(3.0, h as f64 - 2.0);
    let x0 = rng.below((w as f64 - bw) as usize + 1) as f64;
    let y0 = rng.below((h as f64 - bh) as usize + 1) as f64;
    BBox::new(x0, y0, x0 + bw, y0 + bh)
}

fn render(id: &str, p: &SynthParams) -> Scene {
    let mut rng = AuditRng::keyed(p.seed, &format!("scene|{id}"));
    let (w, h) = (p.width, p.height);
    let top = [rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8)];
    let bottom = [rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6)];
    let ripple = rng.uniform(0.0, 0.04);
    let mut frame = Frame::from_fn(w, h, |x, y| {
        let t = y as f64 / (h - 1) as f64;
        let r = ripple * ((x as f64 * 0.7).sin() + (y as f64 * 0.45).cos());
        std::array::from_fn(|c| (top[c] * (1.0 - t) + bottom[c] * t + r).clamp(0.0, 1.0))
    });
    let coverage = rng.uniform(p.min_coverage, p.max_coverage);
    let main = random_box(&mut rng, w, h, coverage);
    let mut boxes = vec![main];
    let mut labels = vec![LABELS[rng.below(LABELS.len())].to_string()];
    if rng.unit() < p.clutter_rate {
        let dx = (main.x1 - main.x0) * 0.3;
        let b = BBox::new(main.x0 + dx, main.y0, (main.x1 + dx).min(w as f64), main.y1);
        boxes.push(b);
        labels.push(LABELS[rng.below(LABELS.len())].to_string());
    } else if rng.unit() < p.distractor_rate {
        for _ in 0..10 {
            let b = random_box(&mut rng, w, h, 0.01);
            if b.intersection(&main) == 0.0 {
                boxes.push(b);
                labels.push(LABELS[rng.below(LABELS.len())].to_string());
                break;
            }
        }
    }
    let mut masks = Vec::new();
    for b in &boxes {
        let m = ellipse_mask(w, h, b);
        let colour = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
        let stripe = rng.uniform(0.05, 0.2);
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    let s = if (x / 3) % 2 == 0 { stripe } else { 0.0 };
                    frame.set_pixel(x, y, std::array::from_fn(|c| (colour[c] - s).clamp(0.0, 1.0)));
                }
            }
        }
        masks.push(m);
    }
    Scene { frame, boxes, labels, masks }
}

/// Renders the corpus into `dir/images` and returns the detection manifest (also written to
/// `dir/detections.jsonl`).
pub fn synthesize(dir: &Path, p: &SynthParams) -> Result<Vec<RawDetection>, PerturbError> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| PerturbError::Io(e.to_string()))?;
    let mut out = Vec::with_capacity(p.n_images);
    let mut manifest = String::new();
    for i in 0..p.n_images {
        let id = format!("syn{i:05}");
        let scene = render(&id, p);
        let rel = format!("images/{id}.png");
        scene.frame.save_png(&dir.join(&rel))?;
        let det = RawDetection {
            image_id: id,
            image_path: rel,
            width: p.width,
            height: p.height,
            dataset: p.dataset.clone(),
            boxes: scene.boxes,
            labels: scene.labels,
            masks: Some(scene.masks.iter().map(|m| Some(RleMask::encode(m))).collect()),
        };
        manifest.push_str(&serde_json::to_string(&det).map_err(|e| PerturbError::Io(e.to_string()))?);
        manifest.push('\n');
        out.push(det);
    }
    std::fs::write(dir.join("detections.jsonl"), manifest).map_err(|e| PerturbError::Io(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{curate, TaxonomyMap};

    #[test]
    fn corpus_curates_mostly() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams { n_images: 40, ..Default::default() };
        let dets = synthesize(dir.path(), &p).unwrap();
        assert_eq!(dets.len(), 40);
        let again = synthesize(dir.path(), &p).unwrap();
        assert_eq!(dets, again);
        let out = curate(&dets, &TaxonomyMap::builtin());
        assert!(out.items.len() >= 30, "{} accepted", out.items.len());
        assert!(out.items.iter().all(|i| i.coverage <= 0.35 && !i.mask_from_bbox));
        assert!(dir.path().join("images/syn00000.png").exists());
    }
}
