//! Windowed local mean and standard deviation.
//!
//! Windows are square and centred on the output pixel. Samples that fall
//! outside the image are replaced by the nearest edge pixel (clamp-to-edge),
//! so every window holds exactly `size * size` samples and the output has
//! the same dimensions as the input. The standard deviation is the
//! population form (divisor `size * size`).
//!
//! Two backends compute the same quantities:
//!
//! * [`StatsBackend::Naive`] walks every window sample directly, `O(size²)`
//!   per pixel. It is the reference.
//! * [`StatsBackend::IntegralImage`] builds summed-area tables over an
//!   edge-padded copy of the image and answers each window with four
//!   lookups, `O(1)` per pixel.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// An odd square window size of at least 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct WindowSpec(usize);

impl WindowSpec {
    pub fn new(size: usize) -> Result<Self> {
        if size < 3 || size % 2 == 0 {
            return Err(Error::InvalidWindow(size));
        }
        Ok(WindowSpec(size))
    }

    pub fn size(self) -> usize {
        self.0
    }

    /// Distance from the centre to the window edge, `(size - 1) / 2`.
    pub fn half(self) -> usize {
        (self.0 - 1) / 2
    }

    fn area(self) -> f64 {
        (self.0 * self.0) as f64
    }
}

impl TryFrom<usize> for WindowSpec {
    type Error = Error;

    fn try_from(size: usize) -> Result<Self> {
        WindowSpec::new(size)
    }
}

impl From<WindowSpec> for usize {
    fn from(w: WindowSpec) -> usize {
        w.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum StatsBackend {
    Naive,
    #[default]
    IntegralImage,
}

/// Local mean over a clamp-padded `w.size() x w.size()` window.
pub fn local_mean(img: &GrayImage, w: WindowSpec, backend: StatsBackend) -> GrayImage {
    local_mean_std(img, w, backend).0
}

/// Local population standard deviation over the same window as [`local_mean`].
pub fn local_std(img: &GrayImage, w: WindowSpec, backend: StatsBackend) -> GrayImage {
    local_mean_std(img, w, backend).1
}

/// Local mean and standard deviation in a single pass.
pub fn local_mean_std(img: &GrayImage, w: WindowSpec, backend: StatsBackend) -> (GrayImage, GrayImage) {
    match backend {
        StatsBackend::Naive => naive_mean_std(img, w),
        StatsBackend::IntegralImage => integral_mean_std(img, w),
    }
}

#[inline]
fn clamp_index(center: usize, offset: isize, len: usize) -> usize {
    (center as isize + offset).clamp(0, len as isize - 1) as usize
}

fn naive_mean_std(img: &GrayImage, w: WindowSpec) -> (GrayImage, GrayImage) {
    let (width, height) = (img.width(), img.height());
    let half = w.half() as isize;
    let area = w.area();
    let mut means = Vec::with_capacity(img.len());
    let mut stds = Vec::with_capacity(img.len());
    for i in 0..height {
        for j in 0..width {
            let mut sum = 0.0;
            for dk in -half..=half {
                let row = img.row(clamp_index(i, dk, height));
                for dh in -half..=half {
                    sum += row[clamp_index(j, dh, width)];
                }
            }
            let mean = sum / area;
            let mut sq = 0.0;
            for dk in -half..=half {
                let row = img.row(clamp_index(i, dk, height));
                for dh in -half..=half {
                    let d = row[clamp_index(j, dh, width)] - mean;
                    sq += d * d;
                }
            }
            means.push(mean);
            stds.push((sq / area).sqrt());
        }
    }
    (
        GrayImage::from_parts(width, height, means),
        GrayImage::from_parts(width, height, stds),
    )
}

/// Summed-area tables of pixel values and squared pixel values.
///
/// Entry `(i, j)` of each table holds the sum over all pixels with
/// `row <= i` and `col <= j`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<f64>,
    sq_sum: Vec<f64>,
}

impl IntegralImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sum_table(&self) -> &[f64] {
        &self.sum
    }

    pub fn sq_sum_table(&self) -> &[f64] {
        &self.sq_sum
    }

    #[inline]
    fn corner(table: &[f64], width: usize, row: isize, col: isize) -> f64 {
        if row < 0 || col < 0 {
            0.0
        } else {
            table[row as usize * width + col as usize]
        }
    }

    #[inline]
    fn rect(&self, table: &[f64], top: usize, left: usize, bottom: usize, right: usize) -> f64 {
        let (t, l, b, r) = (top as isize - 1, left as isize - 1, bottom as isize, right as isize);
        let w = self.width;
        Self::corner(table, w, b, r) - Self::corner(table, w, t, r) - Self::corner(table, w, b, l)
            + Self::corner(table, w, t, l)
    }

    /// Sum of pixels in the inclusive rectangle `[top, bottom] x [left, right]`.
    pub fn window_sum(&self, top: usize, left: usize, bottom: usize, right: usize) -> f64 {
        self.rect(&self.sum, top, left, bottom, right)
    }

    /// Sum of squared pixels in the inclusive rectangle.
    pub fn window_sq_sum(&self, top: usize, left: usize, bottom: usize, right: usize) -> f64 {
        self.rect(&self.sq_sum, top, left, bottom, right)
    }
}

/// Builds the summed-area and squared summed-area tables of `img`.
pub fn build_integral(img: &GrayImage) -> IntegralImage {
    build_integral_shifted(img.width(), img.height(), img.pixels(), 0.0)
}

fn build_integral_shifted(width: usize, height: usize, pixels: &[f64], shift: f64) -> IntegralImage {
    let mut sum = vec![0.0; width * height];
    let mut sq_sum = vec![0.0; width * height];
    for i in 0..height {
        let mut row_sum = 0.0;
        let mut row_sq = 0.0;
        for j in 0..width {
            let v = pixels[i * width + j] - shift;
            row_sum += v;
            row_sq += v * v;
            let idx = i * width + j;
            if i == 0 {
                sum[idx] = row_sum;
                sq_sum[idx] = row_sq;
            } else {
                sum[idx] = sum[idx - width] + row_sum;
                sq_sum[idx] = sq_sum[idx - width] + row_sq;
            }
        }
    }
    IntegralImage {
        width,
        height,
        sum,
        sq_sum,
    }
}

fn integral_mean_std(img: &GrayImage, w: WindowSpec) -> (GrayImage, GrayImage) {
    let (width, height) = (img.width(), img.height());
    let half = w.half();
    let size = w.size();
    let area = w.area();

    // Pad by `half` on every side with edge replication so each window is a
    // plain in-bounds rectangle of the padded table.
    let pw = width + 2 * half;
    let ph = height + 2 * half;
    let mut padded = Vec::with_capacity(pw * ph);
    for pi in 0..ph {
        let row = img.row(clamp_index(pi, -(half as isize), height));
        for pj in 0..pw {
            padded.push(row[clamp_index(pj, -(half as isize), width)]);
        }
    }

    // Sums are taken about a reference level so that E[x²] - E[x]² does not
    // cancel catastrophically on large, nearly flat inputs; a flat image
    // yields exact zeros.
    let shift = img.pixels()[0];
    let table = build_integral_shifted(pw, ph, &padded, shift);

    let mut means = Vec::with_capacity(img.len());
    let mut stds = Vec::with_capacity(img.len());
    for i in 0..height {
        for j in 0..width {
            let s = table.window_sum(i, j, i + size - 1, j + size - 1);
            let sq = table.window_sq_sum(i, j, i + size - 1, j + size - 1);
            let m = s / area;
            let var = (sq / area - m * m).max(0.0);
            means.push(m + shift);
            stds.push(var.sqrt());
        }
    }
    (
        GrayImage::from_parts(width, height, means),
        GrayImage::from_parts(width, height, stds),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const BACKENDS: [StatsBackend; 2] = [StatsBackend::Naive, StatsBackend::IntegralImage];

    fn w(size: usize) -> WindowSpec {
        WindowSpec::new(size).unwrap()
    }

    /// Direct transcription of the clamp-padded window definition, kept
    /// independent of both backends.
    fn oracle(img: &GrayImage, size: usize, i: usize, j: usize) -> (f64, f64) {
        let half = (size as isize - 1) / 2;
        let mut samples = Vec::new();
        for k in -half..=half {
            for h in -half..=half {
                let r = (i as isize + k).max(0).min(img.height() as isize - 1) as usize;
                let c = (j as isize + h).max(0).min(img.width() as isize - 1) as usize;
                samples.push(img.get(r, c));
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn window_validation() {
        assert!(matches!(WindowSpec::new(4), Err(Error::InvalidWindow(4))));
        assert!(WindowSpec::new(1).is_err());
        assert!(WindowSpec::new(0).is_err());
        assert_eq!(w(11).half(), 5);
        assert_eq!(w(3).half(), 1);
    }

    #[test]
    fn constant_image() {
        let img = GrayImage::filled(6, 4, 17.25).unwrap();
        for b in BACKENDS {
            let (m, s) = local_mean_std(&img, w(5), b);
            assert!(m.pixels().iter().all(|&v| v == 17.25), "{b:?}");
            assert!(s.pixels().iter().all(|&v| v == 0.0), "{b:?}");
        }
    }

    #[test]
    fn three_by_three_mean() {
        let img = GrayImage::new(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        for b in BACKENDS {
            let m = local_mean(&img, w(3), b);
            assert!((m.get(1, 1) - 5.0).abs() < 1e-12);
            // clamp-padded corner window [1,1,2,1,1,2,4,4,5]
            assert!((m.get(0, 0) - 21.0 / 9.0).abs() < 1e-12);
            assert!((m.get(0, 0) - oracle(&img, 3, 0, 0).0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_by_three_std() {
        // clamp padding on a single row: the 3x3 window repeats the row three
        // times, so the statistics equal those of [0, 0, 6].
        let img = GrayImage::new(3, 1, vec![0.0, 0.0, 6.0]).unwrap();
        for b in BACKENDS {
            let (m, s) = local_mean_std(&img, w(3), b);
            assert!((m.get(0, 1) - 2.0).abs() < 1e-12);
            assert!((s.get(0, 1) - 8f64.sqrt()).abs() < 1e-12);
            let (om, os) = oracle(&img, 3, 0, 1);
            assert!((m.get(0, 1) - om).abs() < 1e-12 && (s.get(0, 1) - os).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_oracle_everywhere() {
        let img = GrayImage::from_fn(9, 7, |i, j| ((i * 31 + j * 17) % 23) as f64 * 11.0).unwrap();
        for size in [3, 5, 11] {
            for b in BACKENDS {
                let (m, s) = local_mean_std(&img, w(size), b);
                for i in 0..7 {
                    for j in 0..9 {
                        let (om, os) = oracle(&img, size, i, j);
                        assert!((m.get(i, j) - om).abs() < 1e-9, "{b:?} mean {size} ({i},{j})");
                        assert!((s.get(i, j) - os).abs() < 1e-7, "{b:?} std {size} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn window_larger_than_image() {
        let img = GrayImage::new(2, 1, vec![0.0, 10.0]).unwrap();
        for b in BACKENDS {
            let (m, _) = local_mean_std(&img, w(21), b);
            // left pixel: 11 copies of 0 and 10 of 10 per row; right pixel: 10 and 11
            assert!((m.get(0, 0) - 100.0 / 21.0).abs() < 1e-9);
            assert!((m.get(0, 1) - 110.0 / 21.0).abs() < 1e-9);
        }
    }

    #[test]
    fn integral_tables() {
        let img = GrayImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = build_integral(&img);
        assert_eq!(t.sum_table(), &[1.0, 3.0, 4.0, 10.0]);
        assert_eq!(t.sq_sum_table(), &[1.0, 5.0, 10.0, 30.0]);
        assert_eq!(t.window_sum(0, 0, 1, 1), 10.0);
        assert_eq!(t.window_sum(1, 1, 1, 1), 4.0);
        assert_eq!(t.window_sum(0, 1, 1, 1), 6.0);
        assert_eq!(t.window_sq_sum(1, 0, 1, 1), 25.0);
    }

    #[test]
    fn std_scale_equivariance() {
        let img = GrayImage::from_fn(12, 10, |i, j| ((i * 13 + j * 7) % 19) as f64 * 9.0).unwrap();
        let scaled = img.map(|p| 2.5 * p + 40.0).unwrap();
        for b in BACKENDS {
            let s = local_std(&img, w(5), b);
            let s2 = local_std(&scaled, w(5), b);
            for (a, c) in s.pixels().iter().zip(s2.pixels()) {
                assert!((2.5 * a - c).abs() < 1e-9);
            }
        }
    }
}
