//! Anchor-relocation composition: move the segmented object to a corner anchor on its own
//! background at constant scale.
//!
//! Placement rules:
//! - the anchor point of a quadrant is its center, e.g. TL = `((W-1)/4, (H-1)/4)`;
//! - a placement is valid when the moved mask stays inside the frame, does not touch the
//!   salient mask, and its centroid stays on the anchor's side of both image midlines with a
//!   band of `band_frac` of the image size (so the object really sits at that anchor);
//! - on failure the target point walks toward the image center by `jitter_step_frac` of the
//!   diagonal per retry plus uniform perpendicular noise of `±jitter_perp_px`, up to
//!   `max_tries` retries.

use serde::{Deserialize, Serialize};

use super::raster::{Frame, Mask};
use super::{Anchor, PerturbError};
use crate::rng::AuditRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    /// Linear alpha fall-off across the context margin.
    Feathered,
    /// Binary alpha over mask and context margin.
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepositionParams {
    pub max_tries: usize,
    pub blend: Blend,
    /// Pixels of source context carried with the object; the feathered ramp spans this margin.
    pub ramp_px: u32,
    /// Width of the ring whose per-channel median fills the vacated region.
    pub fill_ring_px: u32,
    pub band_frac: f64,
    pub jitter_step_frac: f64,
    pub jitter_perp_px: f64,
    pub seed: u64,
}

impl Default for RepositionParams {
    fn default() -> Self {
        Self {
            max_tries: 25,
            blend: Blend::Feathered,
            ramp_px: 3,
            fill_ring_px: 16,
            band_frac: 0.05,
            jitter_step_frac: 0.05,
            jitter_perp_px: 2.0,
            seed: 2025,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Repositioned {
    pub image: Frame,
    pub moved_mask: Mask,
    pub translation: (i64, i64),
    /// Retries used after the initial placement (0 when the anchor point itself was valid).
    pub retries: usize,
}

pub fn anchor_point(anchor: Anchor, width: u32, height: u32) -> (f64, f64) {
    let (fx, fy) = match anchor {
        Anchor::TL => (0.25, 0.25),
        Anchor::TR => (0.75, 0.25),
        Anchor::BL => (0.25, 0.75),
        Anchor::BR => (0.75, 0.75),
    };
    ((width as f64 - 1.0) * fx, (height as f64 - 1.0) * fy)
}

fn placement_valid(
    mask: &Mask,
    bounds: (u32, u32, u32, u32),
    centroid: (f64, f64),
    t: (i64, i64),
    anchor: Anchor,
    salient: Option<&Mask>,
    band_frac: f64,
) -> bool {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let (x0, y0, x1, y1) = bounds;
    if x0 as i64 + t.0 < 0 || y0 as i64 + t.1 < 0 || x1 as i64 + t.0 >= w || y1 as i64 + t.1 >= h {
        return false;
    }
    let cx = centroid.0 + t.0 as f64;
    let cy = centroid.1 + t.1 as f64;
    let mid_x = (w as f64 - 1.0) / 2.0;
    let mid_y = (h as f64 - 1.0) / 2.0;
    let band_x = band_frac * w as f64;
    let band_y = band_frac * h as f64;
    let left = matches!(anchor, Anchor::TL | Anchor::BL);
    let top = matches!(anchor, Anchor::TL | Anchor::TR);
    let x_ok = if left { cx <= mid_x - band_x } else { cx >= mid_x + band_x };
    let y_ok = if top { cy <= mid_y - band_y } else { cy >= mid_y + band_y };
    if !(x_ok && y_ok) {
        return false;
    }
    match salient {
        Some(s) => !mask.iter_set().any(|(x, y)| s.get_signed(x as i64 + t.0, y as i64 + t.1)),
        None => true,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-channel median of the ring `dilate(mask, ring) \ mask`, falling back to every
/// unmasked pixel when the ring is empty.
fn fill_colour(frame: &Frame, mask: &Mask, ring: u32) -> Result<[f64; 3], PerturbError> {
    let ring_mask = mask.dilate(ring).difference(mask);
    let region = if ring_mask.is_empty() { mask.invert() } else { ring_mask };
    if region.is_empty() {
        return Err(PerturbError::DegenerateRegion("no background pixels to fill from".into()));
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut vals: Vec<f64> = region.iter_set().map(|(x, y)| frame.get(x, y, c)).collect();
        *o = median(&mut vals);
    }
    Ok(out)
}

/// Composites the object of `frame`/`mask` translated by `t` onto the filled background.
pub fn composite(
    frame: &Frame,
    mask: &Mask,
    t: (i64, i64),
    blend: Blend,
    ramp_px: u32,
    fill_ring_px: u32,
) -> Result<(Frame, Mask), PerturbError> {
    let fill = fill_colour(frame, mask, fill_ring_px)?;
    let mut out = frame.clone();
    for (x, y) in mask.iter_set() {
        out.set_pixel(x, y, fill);
    }
    let target = mask.translate(t.0, t.1);
    let dist = target.distance_map(ramp_px);
    let (w, h) = (frame.width(), frame.height());
    for y in 0..h {
        for x in 0..w {
            let d = dist[(y * w + x) as usize];
            if d > ramp_px as f64 + 1e-9 {
                continue;
            }
            let alpha = match blend {
                _ if d == 0.0 => 1.0,
                Blend::Hard => 1.0,
                Blend::Feathered => 1.0 - d / (ramp_px as f64 + 1.0),
            };
            let (sx, sy) = (x as i64 - t.0, y as i64 - t.1);
            if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                continue;
            }
            let src = frame.pixel(sx as u32, sy as u32);
            let bg = out.pixel(x, y);
            let mixed = [
                alpha * src[0] + (1.0 - alpha) * bg[0],
                alpha * src[1] + (1.0 - alpha) * bg[1],
                alpha * src[2] + (1.0 - alpha) * bg[2],
            ];
            out.set_pixel(x, y, mixed);
        }
    }
    Ok((out, target))
}

/// Moves the object to `anchor`. Deterministic given `(item_id, anchor, params.seed)`.
pub fn reposition(
    item_id: &str,
    frame: &Frame,
    mask: &Mask,
    salient: Option<&Mask>,
    anchor: Anchor,
    params: &RepositionParams,
) -> Result<Repositioned, PerturbError> {
    let centroid = mask.centroid().ok_or(PerturbError::EmptyMask)?;
    let bounds = mask.bounds().ok_or(PerturbError::EmptyMask)?;
    let (w, h) = (frame.width(), frame.height());
    let start = anchor_point(anchor, w, h);
    let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (ux, uy) = {
        let (dx, dy) = (center.0 - start.0, center.1 - start.1);
        let n = (dx * dx + dy * dy).sqrt();
        (dx / n, dy / n)
    };
    let step = params.jitter_step_frac * ((w as f64).powi(2) + (h as f64).powi(2)).sqrt();
    let mut rng = AuditRng::keyed(params.seed, &format!("{item_id}|{anchor}"));

    for k in 0..=params.max_tries {
        let (px, py) = if k == 0 {
            start
        } else {
            let along = k as f64 * step;
            let perp = rng.uniform(-params.jitter_perp_px, params.jitter_perp_px);
            (start.0 + along * ux - perp * uy, start.1 + along * uy + perp * ux)
        };
        let t = ((px - centroid.0).round() as i64, (py - centroid.1).round() as i64);
        if placement_valid(mask, bounds, centroid, t, anchor, salient, params.band_frac) {
            let (image, moved_mask) =
                composite(frame, mask, t, params.blend, params.ramp_px, params.fill_ring_px)?;
            return Ok(Repositioned { image, moved_mask, translation: t, retries: k });
        }
    }
    Err(PerturbError::PlacementFailure {
        item_id: item_id.to_string(),
        anchor,
        tries: params.max_tries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: u32, x0: u32, y0: u32, side: u32) -> Mask {
        Mask::from_fn(w, w, |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side)
    }

    fn scene(w: u32) -> Frame {
        Frame::from_fn(w, w, |x, y| [x as f64 / w as f64, y as f64 / w as f64, 0.3])
    }

    #[test]
    fn anchor_points_are_quadrant_centres() {
        assert_eq!(anchor_point(Anchor::TL, 64, 64), (15.75, 15.75));
        assert_eq!(anchor_point(Anchor::BR, 64, 64), (47.25, 47.25));
        assert_eq!(anchor_point(Anchor::TR, 65, 33), (48.0, 8.0));
    }

    #[test]
    fn already_at_anchor_is_identity() {
        let f = scene(64);
        let m = square(64, 44, 44, 8);
        let r = reposition("a", &f, &m, None, Anchor::BR, &RepositionParams::default()).unwrap();
        assert_eq!(r.translation, (0, 0));
        assert_eq!(r.image, f);
        assert_eq!(r.moved_mask, m);
    }

    #[test]
    fn salient_region_forces_jitter() {
        let f = scene(64);
        let m = square(64, 4, 4, 8);
        let mut salient = Mask::new(64, 64);
        for y in 44..52 {
            for x in 44..52 {
                salient.set(x, y, true);
            }
        }
        let p = RepositionParams::default();
        let r = reposition("a", &f, &m, Some(&salient), Anchor::BR, &p).unwrap();
        assert!(r.retries > 0);
        assert!(!r.moved_mask.intersects(&salient));
        // Same seed and key: same placement.
        let r2 = reposition("a", &f, &m, Some(&salient), Anchor::BR, &p).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn empty_mask_errors() {
        let f = scene(16);
        let err = reposition("a", &f, &Mask::new(16, 16), None, Anchor::TL, &Default::default());
        assert_eq!(err.unwrap_err(), PerturbError::EmptyMask);
    }
}
