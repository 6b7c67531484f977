//! Facial-expression template matching with local-statistics features.
//!
//! The pipeline has three stages:
//!
//! 1. **Normalization**: each pixel is standardized against the mean and
//!    standard deviation of its `N x N` neighbourhood,
//!    `y = (x - mu) / (6 sigma)`, which cancels local intensity offsets and
//!    gain.
//! 2. **Feature detection**: the local standard deviation of the normalized
//!    image over an `M x M` window highlights textured regions (eyes, brows,
//!    mouth). The map is flattened row-major into a [`FeatureVector`].
//! 3. **Classification**: a test vector is compared position by position
//!    against every gallery row with the Min-Max score
//!    `(min / max)^alpha`; the row with the largest summed score names the
//!    class.
//!
//! [`eval`] wraps the pipeline in a repeated hold-out protocol and window
//! sweeps; [`dataset`] loads JAFFE-style directories or generates synthetic
//! ones.
//!
//! ```
//! use minmax_match::{generate_synthetic, run_eval, ClassifierKind, PipelineConfig, SynthParams};
//!
//! let ds = generate_synthetic(SynthParams {
//!     classes: 2, subjects: 1, replicates: 2,
//!     height: 24, width: 24, noise_sigma: 0.0, seed: 1,
//! }).unwrap();
//! let report = run_eval(&ds, &PipelineConfig::default(), ClassifierKind::MinMax, 3, 42).unwrap();
//! assert_eq!(report.mean_accuracy, 1.0);
//! ```

pub mod classify;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod localstats;
pub mod pipeline;

pub use classify::{
    classify_minmax, classify_nn_euclidean, minmax_similarity, score, EmotionClass, Gallery,
    ScoreVector, SourceId, JAFFE_CLASSES,
};
pub use dataset::{
    generate_synthetic, load_dataset, parse_jaffe_filename, Dataset, LoadSummary, Sample,
    SynthParams, SyntheticGenerator,
};
pub use error::{Error, Result};
pub use eval::{
    confusion_matrix, evaluate, make_trial_split, run_eval, sweep_windows, ClassifierKind,
    ConfusionMatrix, EvalReport, EvalSettings, FeatureCache, Protocol, SweepMode, SweepTable,
    TrialSplit,
};
pub use image::{affine_intensity, crop, load_image, save_image, CropRect, GrayImage};
pub use localstats::{build_integral, local_mean, local_std, IntegralImage, StatsBackend, WindowSpec};
pub use pipeline::{detect_features, normalize, preprocess, CropPolicy, FeatureVector, PipelineConfig};
