//! Compositing diagnostics for relocated variants and the artifact filter.

use serde::{Deserialize, Serialize};

use super::geometry::reflect_index;
use super::raster::{Frame, Mask};
use super::PerturbError;

/// Mean absolute change (summed over channels) outside `dilate(source ∪ target, pad)`.
pub fn bg_delta(
    original: &Frame,
    variant: &Frame,
    source: &Mask,
    target: &Mask,
    pad: u32,
) -> Result<f64, PerturbError> {
    if !original.same_shape(variant) {
        return Err(PerturbError::ShapeMismatch);
    }
    let excluded = source.union(target).dilate(pad);
    let outside = excluded.invert();
    let n = outside.area();
    if n == 0 {
        return Err(PerturbError::DegenerateRegion("no pixels outside the object regions".into()));
    }
    let mut total = 0.0;
    for (x, y) in outside.iter_set() {
        let a = original.pixel(x, y);
        let b = variant.pixel(x, y);
        total += (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs();
    }
    Ok(total / n as f64)
}

/// Sobel gradient magnitude, averaged over channels, with mirror border.
pub fn gradient_magnitude(frame: &Frame) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let mut out = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let at = |dx: i64, dy: i64, c: usize| {
                frame.get(reflect_index(x as i64 + dx, w), reflect_index(y as i64 + dy, h), c)
            };
            let mut acc = 0.0;
            for c in 0..3 {
                let gx = (at(1, -1, c) + 2.0 * at(1, 0, c) + at(1, 1, c))
                    - (at(-1, -1, c) + 2.0 * at(-1, 0, c) + at(-1, 1, c));
                let gy = (at(-1, 1, c) + 2.0 * at(0, 1, c) + at(1, 1, c))
                    - (at(-1, -1, c) + 2.0 * at(0, -1, c) + at(1, -1, c));
                acc += (gx * gx + gy * gy).sqrt();
            }
            out[(y * w + x) as usize] = acc / 3.0;
        }
    }
    out
}

/// Band `dilate(mask, outer) \ dilate(mask, inner)`.
pub fn ring(mask: &Mask, inner: u32, outer: u32) -> Mask {
    mask.dilate(outer).difference(&mask.dilate(inner))
}

fn ring_mean(grad: &[f64], ring: &Mask) -> Option<f64> {
    let n = ring.area();
    if n == 0 {
        return None;
    }
    let w = ring.width();
    Some(ring.iter_set().map(|(x, y)| grad[(y * w + x) as usize]).sum::<f64>() / n as f64)
}

/// Mean gradient in the ring around the moved mask in the variant, over the same statistic
/// around the source mask in the original. Values near 1 mean no visible seam.
pub fn seam_ratio(
    original: &Frame,
    variant: &Frame,
    source: &Mask,
    target: &Mask,
    inner: u32,
    outer: u32,
) -> Result<f64, PerturbError> {
    if !original.same_shape(variant) {
        return Err(PerturbError::ShapeMismatch);
    }
    let num = ring_mean(&gradient_magnitude(variant), &ring(target, inner, outer))
        .ok_or_else(|| PerturbError::DegenerateRegion("empty seam ring around target".into()))?;
    let den = ring_mean(&gradient_magnitude(original), &ring(source, inner, outer))
        .ok_or_else(|| PerturbError::DegenerateRegion("empty seam ring around source".into()))?;
    if den <= 0.0 {
        return Err(PerturbError::DegenerateRegion("flat source ring".into()));
    }
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactCriterion {
    BgDelta,
    Seam,
    Either,
}

fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Indices kept after dropping the `floor(q% * n)` worst variants by the chosen criterion.
/// `Either` drops the union of both top sets. Ties break toward the lower index.
pub fn filter_by_artifacts(
    bg: &[f64],
    seam: &[f64],
    percentile: f64,
    criterion: ArtifactCriterion,
) -> Vec<usize> {
    let n = bg.len();
    assert_eq!(n, seam.len());
    let k = ((percentile.clamp(0.0, 100.0) / 100.0) * n as f64).floor() as usize;
    let mut drop = vec![false; n];
    if matches!(criterion, ArtifactCriterion::BgDelta | ArtifactCriterion::Either) {
        top_k(bg, k).into_iter().for_each(|i| drop[i] = true);
    }
    if matches!(criterion, ArtifactCriterion::Seam | ArtifactCriterion::Either) {
        top_k(seam, k).into_iter().for_each(|i| drop[i] = true);
    }
    (0..n).filter(|&i| !drop[i]).collect()
}
