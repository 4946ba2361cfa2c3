//! Flips, rotations and Gaussian blur.

use super::raster::{Frame, Mask};
use super::FlipAxis;

/// Mirrors frame and mask about the given axis. Bit-exact involution.
pub fn flip(frame: &Frame, mask: &Mask, axis: FlipAxis) -> (Frame, Mask) {
    let (w, h) = (frame.width(), frame.height());
    let src = |x: u32, y: u32| match axis {
        FlipAxis::Vertical => (x, h - 1 - y),
        FlipAxis::Horizontal => (w - 1 - x, y),
    };
    let out = Frame::from_fn(w, h, |x, y| {
        let (sx, sy) = src(x, y);
        frame.pixel(sx, sy)
    });
    let out_mask = Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let (sx, sy) = src(x, y);
        mask.get(sx, sy)
    });
    (out, out_mask)
}

/// Mirror a continuous coordinate into `[0, n - 1]`.
#[inline]
fn reflect(v: f64, n: u32) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let max = (n - 1) as f64;
    let period = 2.0 * max;
    let mut r = v.rem_euclid(period);
    if r > max {
        r = period - r;
    }
    r
}

#[inline]
pub(super) fn reflect_index(i: i64, n: u32) -> u32 {
    reflect(i as f64, n) as u32
}

fn bilinear(frame: &Frame, sx: f64, sy: f64) -> [f64; 3] {
    let (w, h) = (frame.width(), frame.height());
    let sx = reflect(sx, w);
    let sy = reflect(sy, h);
    let x0 = sx.floor() as u32;
    let y0 = sy.floor() as u32;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = frame.get(x0, y0, c) * (1.0 - fx) + frame.get(x1, y0, c) * fx;
        let bottom = frame.get(x0, y1, c) * (1.0 - fx) + frame.get(x1, y1, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

fn mask_coverage(mask: &Mask, sx: f64, sy: f64) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let v = |x: i64, y: i64| if mask.get_signed(x, y) { 1.0 } else { 0.0 };
    let top = v(x0, y0) * (1.0 - fx) + v(x0 + 1, y0) * fx;
    let bottom = v(x0, y0 + 1) * (1.0 - fx) + v(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotates about the image center by `angle_deg` (counter-clockwise as displayed), bilinear
/// resampling with reflection padding. The mask is resampled with zero padding and
/// thresholded at one half.
pub fn rotate(frame: &Frame, mask: &Mask, angle_deg: f64) -> (Frame, Mask) {
    let (w, h) = (frame.width(), frame.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let theta = angle_deg.to_radians();
    let (sin, cos) = if angle_deg == 0.0 { (0.0, 1.0) } else { theta.sin_cos() };
    let source = |x: u32, y: u32| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
    };
    let out = Frame::from_fn(w, h, |x, y| {
        let (sx, sy) = source(x, y);
        bilinear(frame, sx, sy)
    });
    let out_mask = Mask::from_fn(w, h, |x, y| {
        let (sx, sy) = source(x, y);
        mask_coverage(mask, sx, sy) >= 0.5
    });
    (out, out_mask)
}

/// Normalized 1-D Gaussian taps, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> =
        (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with mirror boundary.
pub fn gaussian_blur(frame: &Frame, sigma: f64) -> Frame {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (frame.width(), frame.height());
    let horizontal = Frame::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for (j, kv) in k.iter().enumerate() {
            let sx = reflect_index(x as i64 + j as i64 - r, w);
            let p = frame.pixel(sx, y);
            for c in 0..3 {
                acc[c] += kv * p[c];
            }
        }
        acc
    });
    Frame::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for (j, kv) in k.iter().enumerate() {
            let sy = reflect_index(y as i64 + j as i64 - r, h);
            let p = horizontal.pixel(x, sy);
            for c in 0..3 {
                acc[c] += kv * p[c];
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(2.5, 5), 2.5);
        assert_eq!(reflect(-9.0, 5), 1.0);
        assert_eq!(reflect(3.0, 1), 0.0);
    }

    #[test]
    fn two_by_one_horizontal_flip() {
        let f = Frame::from_fn(2, 1, |x, _| if x == 0 { [0.1, 0.2, 0.3] } else { [0.7, 0.8, 0.9] });
        let (g, _) = flip(&f, &Mask::new(2, 1), FlipAxis::Horizontal);
        assert_eq!(g.pixel(0, 0), [0.7, 0.8, 0.9]);
        assert_eq!(g.pixel(1, 0), [0.1, 0.2, 0.3]);
    }

    #[test]
    fn kernel_radius_and_normalization() {
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(2.0).len(), 13);
        assert!((gaussian_kernel(2.0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quarter_turn_moves_right_to_top() {
        // 5x5 with a bright pixel right of center; +90 deg puts it above center.
        let f = Frame::from_fn(5, 5, |x, y| if (x, y) == (4, 2) { [1.0; 3] } else { [0.0; 3] });
        let (g, _) = rotate(&f, &Mask::new(5, 5), 90.0);
        assert!(g.get(2, 0, 0) > 0.999, "{:?}", g.pixel(2, 0));
    }
}
