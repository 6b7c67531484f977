//! Repeated hold-out evaluation, confusion matrices and window-size sweeps.
//!
//! The default protocol holds out one randomly chosen image of every
//! (subject, expression) pair per trial and trains on the rest; accuracy is
//! averaged over trials. A classic leave-one-sample-out pass is available as
//! [`Protocol::PerSample`].

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_minmax, classify_nn_euclidean, Gallery};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::localstats::WindowSpec;
use crate::pipeline::{apply_crop, detect_features, normalize, FeatureVector, PipelineConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[default]
    MinMax,
    NnEuclidean,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::MinMax => "minmax",
            ClassifierKind::NnEuclidean => "nn",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(ClassifierKind::MinMax),
            "nn" | "nn_euclidean" => Ok(ClassifierKind::NnEuclidean),
            other => Err(Error::InvalidParams(format!("unknown classifier {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// One held-out image per (subject, expression) pair per trial.
    #[default]
    Paper,
    /// Every sample tested once against all others; a single trial.
    PerSample,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Paper => "paper",
            Protocol::PerSample => "per-sample",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Protocol::Paper),
            "per-sample" => Ok(Protocol::PerSample),
            other => Err(Error::InvalidParams(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Test/train partition of sample ids for one trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialSplit {
    pub test_ids: Vec<usize>,
    pub train_ids: Vec<usize>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` (0-based) in a run seeded with `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    splitmix64(seed ^ splitmix64(trial as u64))
}

fn pair_groups(ds: &Dataset) -> BTreeMap<(String, usize), Vec<usize>> {
    let mut groups: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (id, s) in ds.samples().iter().enumerate() {
        groups.entry((s.subject.clone(), s.expression.id)).or_default().push(id);
    }
    groups
}

/// Pairs with a single sample; they always train and never test.
pub fn singleton_pairs(ds: &Dataset) -> Vec<(String, String)> {
    pair_groups(ds)
        .into_iter()
        .filter(|(_, ids)| ids.len() == 1)
        .map(|((subject, class), _)| (subject, ds.classes()[class].name.clone()))
        .collect()
}

/// Holds out one uniformly chosen sample of every (subject, expression)
/// pair with two or more samples.
pub fn make_trial_split(ds: &Dataset, trial_seed: u64) -> Result<TrialSplit> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut test_ids = Vec::new();
    for ((subject, class), ids) in pair_groups(ds) {
        if ids.len() < 2 {
            debug!("pair {subject}/{class} has a single sample; kept in training");
            continue;
        }
        test_ids.push(ids[rng.random_range(0..ids.len())]);
    }
    if test_ids.is_empty() {
        return Err(Error::InvalidParams(
            "no (subject, expression) pair has two or more samples".into(),
        ));
    }
    test_ids.sort_unstable();
    let train_ids = (0..ds.len()).filter(|id| test_ids.binary_search(id).is_err()).collect();
    Ok(TrialSplit { test_ids, train_ids })
}

/// Preprocessed features for every sample of a dataset under one config.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    norm_window: WindowSpec,
    feat_window: WindowSpec,
    features: Vec<FeatureVector>,
}

impl FeatureCache {
    pub fn build(ds: &Dataset, cfg: &PipelineConfig) -> Result<Self> {
        let normalized = normalized_images(ds, cfg)?;
        Self::from_normalized(&normalized, cfg)
    }

    fn from_normalized(normalized: &[GrayImage], cfg: &PipelineConfig) -> Result<Self> {
        let features = normalized
            .par_iter()
            .map(|y| detect_features(y, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureCache {
            norm_window: cfg.norm_window,
            feat_window: cfg.feat_window,
            features,
        })
    }

    pub fn get(&self, id: usize) -> &FeatureVector {
        &self.features[id]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn windows(&self) -> (usize, usize) {
        (self.norm_window.size(), self.feat_window.size())
    }
}

fn normalized_images(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<GrayImage>> {
    cfg.validate()?;
    let out = ds
        .samples()
        .par_iter()
        .map(|s| {
            let img = apply_crop(&s.image()?, cfg)?;
            normalize(&img, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (out[0].width(), out[0].height());
    if let Some(bad) = out.iter().position(|y| (y.width(), y.height()) != (w, h)) {
        warn!("{} is {}x{} after cropping, expected {w}x{h}", ds.sample(bad).file_name, out[bad].width(), out[bad].height());
        return Err(Error::DimensionMismatch {
            expected: w * h,
            actual: out[bad].len(),
        });
    }
    Ok(out)
}

/// Everything that determines an evaluation run besides the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub cfg: PipelineConfig,
    pub classifier: ClassifierKind,
    pub protocol: Protocol,
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            cfg: PipelineConfig::default(),
            classifier: ClassifierKind::MinMax,
            protocol: Protocol::Paper,
            trials: 30,
            seed: 0,
        }
    }
}

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let c = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|k| self.counts[k][k]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header).map_err(csv_error)?;
        for (name, row) in self.classes.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub trial_seed: u64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: Vec<TrialResult>,
    pub mean_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub settings: EvalSettings,
    /// Times each sample was tested, indexed by sample id.
    pub coverage: Vec<u32>,
}

impl EvalReport {
    pub fn per_trial_accuracy(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.accuracy).collect()
    }

    pub fn write_trials_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "trial_seed", "correct", "total", "accuracy"])
            .map_err(csv_error)?;
        for t in &self.trials {
            w.write_record([
                (t.trial + 1).to_string(),
                t.trial_seed.to_string(),
                t.correct.to_string(),
                t.total.to_string(),
                format_decimal(t.accuracy),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_coverage_csv(&self, ds: &Dataset, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "file", "subject", "class", "index", "times_tested"])
            .map_err(csv_error)?;
        for (id, (s, n)) in ds.samples().iter().zip(&self.coverage).enumerate() {
            w.write_record([
                id.to_string(),
                s.file_name.clone(),
                s.subject.clone(),
                s.expression.name.clone(),
                s.index.to_string(),
                n.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `report.csv`, `confusion.csv` and `coverage.csv` into `dir`.
    pub fn write_outputs(&self, ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_trials_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        self.confusion.write_csv(std::fs::File::create(dir.join("confusion.csv"))?)?;
        self.write_coverage_csv(ds, std::fs::File::create(dir.join("coverage.csv"))?)?;
        Ok(())
    }
}

/// Counts of (true, predicted) pairs accumulated over all trials.
pub fn confusion_matrix(report: &EvalReport) -> &ConfusionMatrix {
    &report.confusion
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParams(format!("csv: {other:?}")),
    }
}

/// Plain decimal with at least six significant digits.
pub fn format_decimal(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.6}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(6) as usize;
    format!("{x:.decimals$}")
}

/// Paper-protocol evaluation with the given pipeline and classifier.
pub fn run_eval(ds: &Dataset, cfg: &PipelineConfig, classifier: ClassifierKind, trials: usize, seed: u64) -> Result<EvalReport> {
    evaluate(
        ds,
        &EvalSettings {
            cfg: *cfg,
            classifier,
            protocol: Protocol::Paper,
            trials,
            seed,
        },
    )
}

/// Runs an evaluation, preprocessing every image once up front.
pub fn evaluate(ds: &Dataset, settings: &EvalSettings) -> Result<EvalReport> {
    validate_settings(settings)?;
    let cache = FeatureCache::build(ds, &settings.cfg)?;
    evaluate_cached(ds, &cache, settings)
}

/// Runs an evaluation against features that were already computed.
pub fn evaluate_cached(ds: &Dataset, cache: &FeatureCache, settings: &EvalSettings) -> Result<EvalReport> {
    validate_settings(settings)?;
    if cache.len() != ds.len()
        || cache.windows() != (settings.cfg.norm_window.size(), settings.cfg.feat_window.size())
    {
        return Err(Error::InvalidParams("feature cache does not match dataset/config".into()));
    }
    run_trials(ds, settings, |_| Ok(std::borrow::Cow::Borrowed(cache)))
}

/// Same as [`evaluate`] but recomputes every feature vector in each trial.
/// Exists to check that caching does not change results.
pub fn evaluate_uncached(ds: &Dataset, settings: &EvalSettings) -> Result<EvalReport> {
    validate_settings(settings)?;
    run_trials(ds, settings, |_| FeatureCache::build(ds, &settings.cfg).map(std::borrow::Cow::Owned))
}

fn validate_settings(settings: &EvalSettings) -> Result<()> {
    if settings.trials == 0 {
        return Err(Error::InvalidParams("trials must be >= 1".into()));
    }
    settings.cfg.validate()
}

fn splits_for(ds: &Dataset, settings: &EvalSettings, trial: usize) -> Result<Vec<TrialSplit>> {
    match settings.protocol {
        Protocol::Paper => Ok(vec![make_trial_split(ds, trial_seed(settings.seed, trial))?]),
        Protocol::PerSample => {
            if ds.len() < 2 {
                return Err(Error::InvalidParams("per-sample protocol needs 2+ samples".into()));
            }
            Ok((0..ds.len())
                .map(|id| TrialSplit {
                    test_ids: vec![id],
                    train_ids: (0..ds.len()).filter(|&k| k != id).collect(),
                })
                .collect())
        }
    }
}

fn run_trials<'c>(
    ds: &Dataset,
    settings: &EvalSettings,
    features_for_trial: impl Fn(usize) -> Result<std::borrow::Cow<'c, FeatureCache>>,
) -> Result<EvalReport> {
    let trials = match settings.protocol {
        Protocol::Paper => settings.trials,
        Protocol::PerSample => {
            if settings.trials != 1 {
                info!("per-sample protocol is deterministic; running a single pass");
            }
            1
        }
    };
    if settings.protocol == Protocol::Paper {
        for (subject, class) in singleton_pairs(ds) {
            warn!("{subject}/{class} has a single image; it is never tested");
        }
    }

    let names = ds.classes().iter().map(|c| c.name.clone()).collect();
    let mut confusion = ConfusionMatrix::new(names);
    let mut coverage = vec![0u32; ds.len()];
    let mut results = Vec::with_capacity(trials);

    for trial in 0..trials {
        let cache = features_for_trial(trial)?;
        let mut correct = 0;
        let mut total = 0;
        for split in splits_for(ds, settings, trial)? {
            let predictions = classify_split(ds, &cache, &split, settings)?;
            for (&id, predicted) in split.test_ids.iter().zip(predictions) {
                let truth = ds.sample(id).expression.id;
                confusion.record(truth, predicted);
                coverage[id] += 1;
                total += 1;
                if truth == predicted {
                    correct += 1;
                }
            }
        }
        let accuracy = correct as f64 / total as f64;
        info!("trial {}/{trials}: {correct}/{total} correct ({})", trial + 1, format_decimal(accuracy));
        results.push(TrialResult {
            trial,
            trial_seed: trial_seed(settings.seed, trial),
            correct,
            total,
            accuracy,
        });
    }

    let mean_accuracy = results.iter().map(|t| t.accuracy).sum::<f64>() / results.len() as f64;
    Ok(EvalReport {
        trials: results,
        mean_accuracy,
        confusion,
        settings: EvalSettings { trials, ..*settings },
        coverage,
    })
}

/// Predicted class id for every test sample of `split`, in order.
fn classify_split(ds: &Dataset, cache: &FeatureCache, split: &TrialSplit, settings: &EvalSettings) -> Result<Vec<usize>> {
    let mut in_test = vec![false; ds.len()];
    for &id in &split.test_ids {
        in_test[id] = true;
    }
    if let Some(&leak) = split.train_ids.iter().find(|&&id| in_test[id]) {
        return Err(Error::SplitLeak(leak));
    }
    let gallery = Gallery::new(
        split.train_ids.iter().map(|&id| cache.get(id)),
        split.train_ids.iter().map(|&id| ds.sample(id).expression.clone()).collect(),
        split.train_ids.iter().map(|&id| ds.sample(id).source_id(id)).collect(),
    )?;
    debug_assert!(gallery.source_ids().iter().all(|s| !in_test[s.sample]));
    split
        .test_ids
        .par_iter()
        .map(|&id| {
            let test = cache.get(id);
            let class = match settings.classifier {
                ClassifierKind::MinMax => classify_minmax(&gallery, test, settings.cfg.alpha)?.class,
                ClassifierKind::NnEuclidean => classify_nn_euclidean(&gallery, test)?.class,
            };
            Ok(class.id)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepMode {
    /// Keep the normalization window fixed and vary the feature window.
    FixNVaryM,
    /// Vary both windows together (N = M).
    VaryBoth,
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fix-n" | "fix_N_vary_M" | "fix-n-vary-m" => Ok(SweepMode::FixNVaryM),
            "vary-both" | "vary_both" => Ok(SweepMode::VaryBoth),
            other => Err(Error::InvalidParams(format!("unknown sweep mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub norm_window: usize,
    pub feat_window: usize,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub trials: usize,
    pub seed: u64,
}

impl SweepTable {
    /// Highest mean accuracy; the earliest row wins ties.
    pub fn best(&self) -> Option<&SweepRow> {
        let mut best: Option<&SweepRow> = None;
        for row in &self.rows {
            if best.is_none_or(|b| row.mean_accuracy > b.mean_accuracy) {
                best = Some(row);
            }
        }
        best
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "M", "mean_accuracy", "trials", "seed"])
            .map_err(csv_error)?;
        for r in &self.rows {
            w.write_record([
                r.norm_window.to_string(),
                r.feat_window.to_string(),
                format_decimal(r.mean_accuracy),
                self.trials.to_string(),
                self.seed.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Odd window sizes 3, 5, ..., 21.
pub fn default_sweep_sizes() -> Vec<usize> {
    (3..=21).step_by(2).collect()
}

/// Evaluates every window combination of `mode` over `sizes`, sharing the
/// trial seeds (and therefore the splits) across rows.
pub fn sweep_windows(ds: &Dataset, base: &EvalSettings, mode: SweepMode, sizes: &[usize]) -> Result<SweepTable> {
    if sizes.is_empty() {
        return Err(Error::InvalidParams("no window sizes given".into()));
    }
    for &s in sizes {
        WindowSpec::new(s)?;
        if s > 21 {
            return Err(Error::InvalidParams(format!("window size {s} outside 3..=21")));
        }
    }
    validate_settings(base)?;

    let mut normalized: HashMap<usize, Vec<GrayImage>> = HashMap::new();
    let mut rows = Vec::with_capacity(sizes.len());
    let mut trials = base.trials;
    for &s in sizes {
        let (n, m) = match mode {
            SweepMode::FixNVaryM => (base.cfg.norm_window.size(), s),
            SweepMode::VaryBoth => (s, s),
        };
        let cfg = PipelineConfig {
            norm_window: WindowSpec::new(n)?,
            feat_window: WindowSpec::new(m)?,
            ..base.cfg
        };
        let images = match normalized.entry(n) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(normalized_images(ds, &cfg)?),
        };
        let cache = FeatureCache::from_normalized(images, &cfg)?;
        let report = evaluate_cached(ds, &cache, &EvalSettings { cfg, ..*base })?;
        info!("sweep N={n} M={m}: {}", format_decimal(report.mean_accuracy));
        trials = report.settings.trials;
        rows.push(SweepRow {
            norm_window: n,
            feat_window: m,
            mean_accuracy: report.mean_accuracy,
        });
    }
    Ok(SweepTable {
        rows,
        trials,
        seed: base.seed,
    })
}
