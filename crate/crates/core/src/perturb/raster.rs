//! RGB frames normalized to `[0, 1]` and binary masks.

use std::path::Path;

use crate::catalog::BBox;

use super::PerturbError;

/// Interleaved RGB pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; width as usize * height as usize * 3] }
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[self.idx(x, y) + c]
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / self.data.len() as f64
    }

    /// Loads any 8- or 16-bit image and normalizes to `[0, 1]` RGB.
    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        let img = image::open(path)
            .map_err(|e| PerturbError::Io(format!("{}: {e}", path.display())))?
            .into_rgb32f();
        let (width, height) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect();
        Ok(Self { width, height, data })
    }

    /// 8-bit quantization used for persisted variants.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Self {
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Self { width, height, data }
    }

    /// Encodes as an 8-bit PNG in memory.
    pub fn encode_png(&self) -> Result<Vec<u8>, PerturbError> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.to_rgb8(), self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| PerturbError::Io(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), PerturbError> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| PerturbError::Io(format!("{}: {e}", path.display())))
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self { width, height, bits }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Out-of-frame coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    /// Sets every pixel whose center lies inside the box.
    pub fn fill_box(&mut self, b: &BBox) {
        for y in 0..self.height {
            let cy = y as f64 + 0.5;
            if cy < b.y0 || cy >= b.y1 {
                continue;
            }
            for x in 0..self.width {
                let cx = x as f64 + 0.5;
                if cx >= b.x0 && cx < b.x1 {
                    self.set(x, y, true);
                }
            }
        }
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Mean pixel coordinate of set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.iter_set() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Inclusive pixel bounds `(x_min, y_min, x_max, y_max)`.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut acc: Option<(u32, u32, u32, u32)> = None;
        for (x, y) in self.iter_set() {
            acc = Some(match acc {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
        acc
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Mask::from_bits(self.width, self.height, bits)
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect();
        Mask::from_bits(self.width, self.height, bits)
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    pub fn invert(&self) -> Mask {
        Mask::from_bits(self.width, self.height, self.bits.iter().map(|b| !b).collect())
    }

    /// Shifts by an integer offset; pixels leaving the frame are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for (x, y) in self.iter_set() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                out.set(nx as u32, ny as u32, true);
            }
        }
        out
    }

    fn is_boundary(&self, x: u32, y: u32) -> bool {
        let (xi, yi) = (x as i64, y as i64);
        [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
            let (nx, ny) = (xi + dx, yi + dy);
            nx >= 0
                && ny >= 0
                && nx < self.width as i64
                && ny < self.height as i64
                && !self.get(nx as u32, ny as u32)
        })
    }

    /// Euclidean distance from each pixel to the nearest set pixel, exact up to `max_radius`
    /// and `f64::INFINITY` beyond it. Set pixels are at distance 0.
    pub fn distance_map(&self, max_radius: u32) -> Vec<f64> {
        let mut dist: Vec<f64> =
            self.bits.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
        let r = max_radius as i64;
        let offsets: Vec<(i64, i64, f64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r && (*dx, *dy) != (0, 0))
            .map(|(dx, dy)| (dx, dy, ((dx * dx + dy * dy) as f64).sqrt()))
            .collect();
        let (w, h) = (self.width as i64, self.height as i64);
        for (x, y) in self.iter_set() {
            if !self.is_boundary(x, y) {
                continue;
            }
            for &(dx, dy, d) in &offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let i = (ny * w + nx) as usize;
                if d < dist[i] {
                    dist[i] = d;
                }
            }
        }
        dist
    }

    /// Disk dilation with Euclidean radius `r`.
    pub fn dilate(&self, r: u32) -> Mask {
        if r == 0 {
            return self.clone();
        }
        let limit = r as f64 + 1e-9;
        let bits = self.distance_map(r).into_iter().map(|d| d <= limit).collect();
        Mask::from_bits(self.width, self.height, bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilate_matches_brute_force() {
        let m = Mask::from_fn(20, 15, |x, y| (x == 5 && y == 5) || (x >= 12 && x <= 14 && y >= 8 && y <= 9));
        for r in [1u32, 2, 3, 5] {
            let d = m.dilate(r);
            for y in 0..15 {
                for x in 0..20 {
                    let brute = m.iter_set().any(|(sx, sy)| {
                        let dx = sx as f64 - x as f64;
                        let dy = sy as f64 - y as f64;
                        dx * dx + dy * dy <= (r * r) as f64
                    });
                    assert_eq!(d.get(x, y), brute, "r={r} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn centroid_and_bounds() {
        let m = Mask::from_fn(10, 10, |x, y| (2..=4).contains(&x) && (6..=7).contains(&y));
        assert_eq!(m.centroid(), Some((3.0, 6.5)));
        assert_eq!(m.bounds(), Some((2, 6, 4, 7)));
        assert_eq!(m.area(), 6);
        assert_eq!(Mask::new(3, 3).centroid(), None);
    }

    #[test]
    fn png_round_trip_is_lossless_for_8bit_values() {
        let f = Frame::from_fn(5, 4, |x, y| [x as f64 / 255.0, y as f64 / 255.0, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        f.save_png(&p).unwrap();
        let g = Frame::load(&p).unwrap();
        assert!(f.mean_abs_diff(&g) < 1e-6);
    }
}
