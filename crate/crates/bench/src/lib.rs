//! Deterministic inputs shared by the benchmarks.

use invariaudit_core::perturb::{Frame, Mask};
use invariaudit_core::rng::AuditRng;

/// Paired percent shifts around `center` with unit-scale noise.
pub fn shifts(n: usize, center: f64, seed: u64) -> Vec<f64> {
    let mut rng = AuditRng::new(seed);
    (0..n).map(|_| center + rng.normal()).collect()
}

/// Per-item shift groups of `k` transforms each.
pub fn shift_groups(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = AuditRng::new(seed);
    (0..n).map(|_| (0..k).map(|_| 0.02 * rng.normal()).collect()).collect()
}

/// Textured square scene with a dark square object at `(x0, y0)`.
pub fn scene(size: u32, x0: u32, y0: u32, side: u32) -> (Frame, Mask) {
    let inside = |x: u32, y: u32| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side;
    let frame = Frame::from_fn(size, size, |x, y| {
        if inside(x, y) {
            return [0.05, 0.05, 0.1];
        }
        let s = (x as f64 * 0.35).sin() * 0.1 + (y as f64 * 0.27).cos() * 0.1;
        [0.3 + 0.4 * x as f64 / size as f64 + s, 0.6 - 0.3 * y as f64 / size as f64, 0.5 + s]
    });
    (frame, Mask::from_fn(size, size, inside))
}
