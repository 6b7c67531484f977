//! Image to feature-vector transform: crop, local normalization, then local
//! standard deviation of the normalized image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{crop, CropRect, GrayImage};
use crate::localstats::{local_mean_std, local_std, StatsBackend, WindowSpec};

/// Where, if anywhere, to crop input images before normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CropPolicy {
    /// Use the image as is.
    None,
    /// Crop 256x256 frames to [`CropRect::JAFFE_DEFAULT`]; leave other sizes
    /// untouched.
    #[default]
    JaffeAuto,
    /// Always crop to this rectangle.
    Fixed(CropRect),
}

impl CropPolicy {
    pub fn rect_for(&self, width: usize, height: usize) -> Option<CropRect> {
        match *self {
            CropPolicy::None => None,
            CropPolicy::JaffeAuto if width == 256 && height == 256 => Some(CropRect::JAFFE_DEFAULT),
            CropPolicy::JaffeAuto => None,
            CropPolicy::Fixed(rect) => Some(rect),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Normalization window (N).
    pub norm_window: WindowSpec,
    /// Feature-detection window (M).
    pub feat_window: WindowSpec,
    /// Min-Max similarity exponent, consumed by the classifier.
    pub alpha: f64,
    /// Lower bound on the local standard deviation in the normalization
    /// denominator.
    pub sigma_floor: f64,
    pub crop: CropPolicy,
    pub backend: StatsBackend,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            norm_window: WindowSpec::new(11).expect("11 is a valid window"),
            feat_window: WindowSpec::new(11).expect("11 is a valid window"),
            alpha: 3.0,
            sigma_floor: 1e-8,
            crop: CropPolicy::JaffeAuto,
            backend: StatsBackend::IntegralImage,
        }
    }
}

impl PipelineConfig {
    pub fn with_windows(norm: usize, feat: usize) -> Result<Self> {
        Ok(PipelineConfig {
            norm_window: WindowSpec::new(norm)?,
            feat_window: WindowSpec::new(feat)?,
            ..PipelineConfig::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_floor must be > 0, got {}",
                self.sigma_floor
            )));
        }
        Ok(())
    }
}

/// Flattened (row-major) feature map. Every entry is a local standard
/// deviation, so it is finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParams(format!(
                "feature values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(FeatureVector { values, rows, cols })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(rows, cols)` of the feature map this vector was flattened from.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_parts(self.cols, self.rows, self.values.clone())
    }
}

/// `(x - mu) / (6 * max(sigma, floor))` with `mu`, `sigma` taken over the
/// normalization window.
pub fn normalize(img: &GrayImage, cfg: &PipelineConfig) -> Result<GrayImage> {
    cfg.validate()?;
    let (mean, std) = local_mean_std(img, cfg.norm_window, cfg.backend);
    let floor = cfg.sigma_floor;
    let out = img
        .pixels()
        .iter()
        .zip(mean.pixels())
        .zip(std.pixels())
        .map(|((&x, &mu), &sigma)| (x - mu) / (6.0 * sigma.max(floor)))
        .collect();
    Ok(GrayImage::from_parts(img.width(), img.height(), out))
}

/// Local standard deviation of a normalized image over the feature window,
/// flattened row-major.
pub fn detect_features(norm: &GrayImage, cfg: &PipelineConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    let w = local_std(norm, cfg.feat_window, cfg.backend);
    let (rows, cols) = (w.height(), w.width());
    Ok(FeatureVector {
        values: w.into_pixels(),
        rows,
        cols,
    })
}

/// Applies the configured crop (if any) to `img`.
pub fn apply_crop(img: &GrayImage, cfg: &PipelineConfig) -> Result<GrayImage> {
    match cfg.crop.rect_for(img.width(), img.height()) {
        Some(rect) => crop(img, rect),
        None => Ok(img.clone()),
    }
}

/// Full transform: crop, normalize, detect features.
pub fn preprocess(img: &GrayImage, cfg: &PipelineConfig) -> Result<FeatureVector> {
    let cropped = apply_crop(img, cfg)?;
    detect_features(&normalize(&cropped, cfg)?, cfg)
}

/// Intermediate images of [`preprocess`], for inspection.
#[derive(Clone, Debug)]
pub struct Stages {
    pub cropped: GrayImage,
    pub normalized: GrayImage,
    pub features: FeatureVector,
}

pub fn preprocess_stages(img: &GrayImage, cfg: &PipelineConfig) -> Result<Stages> {
    let cropped = apply_crop(img, cfg)?;
    let normalized = normalize(&cropped, cfg)?;
    let features = detect_features(&normalized, cfg)?;
    Ok(Stages {
        cropped,
        normalized,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::affine_intensity;

    fn cfg(n: usize, m: usize) -> PipelineConfig {
        PipelineConfig::with_windows(n, m).unwrap()
    }

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |i, j| {
            let v = (i * 7919 + j * 104729 + i * j * 31) % 211;
            20.0 + v as f64
        })
        .unwrap()
    }

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.norm_window.size(), 11);
        assert_eq!(c.feat_window.size(), 11);
        assert_eq!(c.alpha, 3.0);
        assert_eq!(c.sigma_floor, 1e-8);
    }

    #[test]
    fn constant_normalizes_to_zero() {
        let img = GrayImage::filled(8, 8, 99.0).unwrap();
        for backend in [StatsBackend::Naive, StatsBackend::IntegralImage] {
            let c = PipelineConfig { backend, ..cfg(3, 3) };
            let y = normalize(&img, &c).unwrap();
            assert!(y.pixels().iter().all(|&v| v == 0.0));
            let f = detect_features(&y, &c).unwrap();
            assert!(f.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_by_three_normalization() {
        let img = GrayImage::new(3, 1, vec![0.0, 0.0, 6.0]).unwrap();
        let expected = -2.0 / (6.0 * 8f64.sqrt());
        for backend in [StatsBackend::Naive, StatsBackend::IntegralImage] {
            let y = normalize(&img, &PipelineConfig { backend, ..cfg(3, 3) }).unwrap();
            assert!((y.get(0, 1) - expected).abs() < 1e-12, "{backend:?}");
            assert!((y.get(0, 1) + 0.117_851_130_197_757_92).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_of_ten_cancels() {
        let img = textured(30, 24);
        let c = cfg(11, 11);
        let base = normalize(&img, &c).unwrap();
        for offset in [10.0, -10.0] {
            let shifted = normalize(&affine_intensity(&img, 1.0, offset).unwrap(), &c).unwrap();
            for (a, b) in base.pixels().iter().zip(shifted.pixels()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let f0 = preprocess(&img, &c).unwrap();
        let f1 = preprocess(&affine_intensity(&img, 1.0, -10.0).unwrap(), &c).unwrap();
        for (a, b) in f0.values().iter().zip(f1.values()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn jaffe_frame_length() {
        let frame = textured(256, 256);
        let f = preprocess(&frame, &PipelineConfig::default()).unwrap();
        assert_eq!(f.len(), 101 * 114);
        assert_eq!(f.dims(), (114, 101));
    }

    #[test]
    fn length_independent_of_windows() {
        let img = textured(17, 13);
        for (n, m) in [(3, 3), (3, 21), (21, 5), (11, 11)] {
            let f = preprocess(&img, &PipelineConfig { crop: CropPolicy::None, ..cfg(n, m) }).unwrap();
            assert_eq!(f.len(), 17 * 13);
            assert!(f.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn deterministic() {
        let img = textured(40, 40);
        let c = PipelineConfig::default();
        assert_eq!(preprocess(&img, &c).unwrap(), preprocess(&img, &c).unwrap());
    }

    #[test]
    fn crop_policy() {
        assert_eq!(CropPolicy::JaffeAuto.rect_for(256, 256), Some(CropRect::JAFFE_DEFAULT));
        assert_eq!(CropPolicy::JaffeAuto.rect_for(48, 48), None);
        assert_eq!(CropPolicy::None.rect_for(256, 256), None);
        let r = CropRect::new(1, 1, 2, 2);
        assert_eq!(CropPolicy::Fixed(r).rect_for(5, 5), Some(r));
        let err = preprocess(&textured(4, 4), &PipelineConfig { crop: CropPolicy::Fixed(CropRect::new(3, 0, 2, 2)), ..cfg(3, 3) });
        assert!(matches!(err, Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn rejects_bad_alpha_and_floor() {
        let img = textured(5, 5);
        let bad_alpha = PipelineConfig { alpha: 0.0, ..PipelineConfig::default() };
        assert!(matches!(normalize(&img, &bad_alpha), Err(Error::InvalidConfig(_))));
        let bad_floor = PipelineConfig { sigma_floor: -1.0, ..PipelineConfig::default() };
        assert!(matches!(normalize(&img, &bad_floor), Err(Error::InvalidConfig(_))));
    }
}
