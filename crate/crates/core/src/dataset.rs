//! Labeled image collections: JAFFE-style directories and a seeded synthetic
//! generator for testing without the licensed corpus.
//!
//! JAFFE files are named `<SUBJECT>.<CODE><k>.<serial>.<ext>`, for example
//! `KA.AN1.39.pgm`, where `CODE` is a two-letter expression code and `k` the
//! replicate number for that subject and expression.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::{EmotionClass, SourceId, JAFFE_CLASSES};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, GrayImage};

const JAFFE_CODES: [&str; 7] = ["AN", "DI", "FE", "HA", "NE", "SA", "SU"];

/// Two-letter JAFFE code for a class name, if it is one of the seven.
pub fn expression_code(name: &str) -> Option<&'static str> {
    JAFFE_CLASSES.iter().position(|&c| c == name).map(|k| JAFFE_CODES[k])
}

/// The components of a JAFFE file name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JaffeName {
    pub subject: String,
    /// Class with its canonical JAFFE id (0 = anger ... 6 = surprise).
    pub expression: EmotionClass,
    pub index: u32,
    pub serial: u32,
    pub extension: String,
}

pub fn parse_jaffe_filename(name: &str) -> Result<JaffeName> {
    let unparseable = || Error::UnparseableName(name.to_string());
    let parts: Vec<&str> = name.split('.').collect();
    let [subject, expr, serial, extension] = parts[..] else {
        return Err(unparseable());
    };
    if subject.is_empty() || !subject.chars().all(|c| c.is_ascii_alphanumeric()) || extension.is_empty() {
        return Err(unparseable());
    }
    let serial: u32 = serial.parse().map_err(|_| unparseable())?;
    let split = expr.find(|c: char| c.is_ascii_digit()).ok_or_else(unparseable)?;
    let (code, digits) = expr.split_at(split);
    if code.is_empty() || !code.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(unparseable());
    }
    let index: u32 = digits.parse().map_err(|_| unparseable())?;
    if index == 0 {
        return Err(unparseable());
    }
    let id = JAFFE_CODES
        .iter()
        .position(|&c| c == code)
        .ok_or_else(|| Error::UnknownExpressionCode {
            name: name.to_string(),
            code: code.to_string(),
        })?;
    Ok(JaffeName {
        subject: subject.to_string(),
        expression: EmotionClass::new(id, JAFFE_CLASSES[id]),
        index,
        serial,
        extension: extension.to_string(),
    })
}

/// Inverse of [`parse_jaffe_filename`]. Returns `None` when `expression` is
/// not one of the seven JAFFE class names.
pub fn format_jaffe_filename(subject: &str, expression: &str, index: u32, serial: u32, extension: &str) -> Option<String> {
    let code = expression_code(expression)?;
    Some(format!("{subject}.{code}{index}.{serial}.{extension}"))
}

/// Pixels of a sample: a file decoded on demand, or an in-memory image.
#[derive(Clone, Debug)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Arc<GrayImage>),
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub subject: String,
    pub expression: EmotionClass,
    /// Replicate number within (subject, expression), starting at 1.
    pub index: u32,
    pub file_name: String,
    pub source: ImageSource,
}

impl Sample {
    pub fn image(&self) -> Result<GrayImage> {
        match &self.source {
            ImageSource::File(path) => load_image(path),
            ImageSource::Memory(img) => Ok(GrayImage::clone(img)),
        }
    }

    pub fn source_id(&self, sample: usize) -> SourceId {
        SourceId {
            sample,
            subject: self.subject.clone(),
            expression: self.expression.name.clone(),
            index: self.index,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: Vec<EmotionClass>,
    subjects: Vec<String>,
}

/// One row of the JSON manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub filename: String,
    pub subject: String,
    pub class: String,
    pub index: u32,
}

impl Dataset {
    /// Builds a dataset, checking that every label and subject is listed and
    /// that `(subject, expression, index)` is unique.
    pub fn new(samples: Vec<Sample>, classes: Vec<EmotionClass>, subjects: Vec<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (k, c) in classes.iter().enumerate() {
            if c.id != k {
                return Err(Error::InvalidParams(format!(
                    "class {:?} has id {} at position {k}",
                    c.name, c.id
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &samples {
            if classes.get(s.expression.id) != Some(&s.expression) {
                return Err(Error::InvalidParams(format!("unknown class {:?}", s.expression.name)));
            }
            if !subjects.contains(&s.subject) {
                return Err(Error::InvalidParams(format!("unknown subject {:?}", s.subject)));
            }
            if !seen.insert((s.subject.clone(), s.expression.id, s.index)) {
                return Err(Error::InvalidParams(format!(
                    "duplicate sample {}/{}/{}",
                    s.subject, s.expression.name, s.index
                )));
            }
        }
        Ok(Dataset {
            samples,
            classes,
            subjects,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, id: usize) -> &Sample {
        &self.samples[id]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> &[EmotionClass] {
        &self.classes
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn class_by_name(&self, name: &str) -> Option<&EmotionClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Decodes every sample's pixels, in sample order.
    pub fn materialize(&self) -> Result<Vec<GrayImage>> {
        self.samples.iter().map(Sample::image).collect()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.samples
            .iter()
            .map(|s| ManifestEntry {
                filename: s.file_name.clone(),
                subject: s.subject.clone(),
                class: s.expression.name.clone(),
                index: s.index,
            })
            .collect()
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut json = serde_json::to_string_pretty(&self.manifest())?;
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    /// Writes every sample as a PGM named by its `file_name`, plus
    /// `manifest.json`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for s in &self.samples {
            save_image(&s.image()?, dir.join(&s.file_name))?;
        }
        self.write_manifest(dir.join("manifest.json"))
    }
}

/// Counts reported by [`load_dataset`].
#[derive(Clone, Debug, Default)]
pub struct LoadSummary {
    pub images: usize,
    pub subjects: usize,
    pub classes: usize,
    /// Files whose names did not parse, or duplicated an earlier sample.
    pub skipped: Vec<String>,
    /// Files that parsed but failed to decode, with the reason.
    pub failed: Vec<(String, String)>,
}

/// Loads every parseable image in `dir` (non-recursive).
///
/// Files are visited in name order. Pixels are decoded once to validate the
/// file and then dropped; samples keep only the path. Classes are the JAFFE
/// classes that occur, in canonical order, numbered from 0.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Dataset, LoadSummary)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::FileNotFound(dir.to_path_buf()));
    }
    let mut names: Vec<(String, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|e| e.file_name().into_string().ok().map(|n| (n, e.path())))
        .collect();
    names.sort();

    let mut summary = LoadSummary::default();
    let mut parsed: Vec<(JaffeName, String, PathBuf)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (name, path) in names {
        if name == "manifest.json" {
            continue;
        }
        let jn = match parse_jaffe_filename(&name) {
            Ok(jn) => jn,
            Err(e) => {
                warn!("skipping {name}: {e}");
                summary.skipped.push(name);
                continue;
            }
        };
        if !seen.insert((jn.subject.clone(), jn.expression.id, jn.index)) {
            warn!("skipping {name}: duplicate subject/expression/replicate");
            summary.skipped.push(name);
            continue;
        }
        if let Err(e) = load_image(&path) {
            warn!("skipping {name}: {e}");
            seen.remove(&(jn.subject.clone(), jn.expression.id, jn.index));
            summary.failed.push((name, e.to_string()));
            continue;
        }
        parsed.push((jn, name, path));
    }
    if parsed.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let present: BTreeSet<usize> = parsed.iter().map(|(jn, _, _)| jn.expression.id).collect();
    let remap: BTreeMap<usize, EmotionClass> = present
        .iter()
        .enumerate()
        .map(|(k, &canon)| (canon, EmotionClass::new(k, JAFFE_CLASSES[canon])))
        .collect();
    let classes: Vec<EmotionClass> = remap.values().cloned().collect();
    let subjects: Vec<String> = parsed
        .iter()
        .map(|(jn, _, _)| jn.subject.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let samples = parsed
        .into_iter()
        .map(|(jn, name, path)| Sample {
            subject: jn.subject,
            expression: remap[&jn.expression.id].clone(),
            index: jn.index,
            file_name: name,
            source: ImageSource::File(path),
        })
        .collect();

    let ds = Dataset::new(samples, classes, subjects)?;
    summary.images = ds.len();
    summary.subjects = ds.subjects().len();
    summary.classes = ds.classes().len();
    Ok((ds, summary))
}

/// Parameters of [`generate_synthetic`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub classes: usize,
    pub subjects: usize,
    pub replicates: usize,
    /// Rows (m).
    pub height: usize,
    /// Columns (n).
    pub width: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

const GRID: usize = 4;
const CELLS_PER_CLASS: usize = 4;
const MAX_SHARED_CELLS: usize = 2;
const BACKGROUND_LEVEL: f64 = 128.0;
const BACKGROUND_AMPLITUDE: f64 = 20.0;
const PATCH_AMPLITUDE: f64 = 80.0;
const BIAS_OFFSET: f64 = 20.0;
const BIAS_SPAN: f64 = 20.0;

/// Seeded generator of class prototypes and per-subject illumination fields.
///
/// Every image carries a shared low-contrast noise texture. Each class adds
/// high-contrast noise patches in its own set of cells of a 4x4 grid (two
/// classes share at most two cells), so the feature maps differ around the
/// patch boundaries. Each subject adds a smooth bias field: a constant
/// offset plus a linear ramp. A sample is
/// `round(clamp(prototype + bias + noise, 0, 255))`.
#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    params: SynthParams,
    prototypes: Vec<GrayImage>,
    biases: Vec<GrayImage>,
}

fn derive_seed(seed: u64, stream: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(k) * 16);
    rng.random()
}

impl SyntheticGenerator {
    pub fn new(params: SynthParams) -> Result<Self> {
        let p = params;
        if p.classes < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 classes, got {}", p.classes)));
        }
        if p.subjects < 1 {
            return Err(Error::InvalidParams("need at least 1 subject".into()));
        }
        if p.replicates < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 replicates per subject and class, got {}",
                p.replicates
            )));
        }
        if p.height < 3 * GRID || p.width < 3 * GRID {
            return Err(Error::InvalidParams(format!(
                "images must be at least {0}x{0}, got {1}x{2}",
                3 * GRID,
                p.width,
                p.height
            )));
        }
        if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
            return Err(Error::InvalidParams(format!("noise sigma must be >= 0, got {}", p.noise_sigma)));
        }

        let mut base_rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, 1, 0));
        let background: Vec<f64> = (0..p.width * p.height)
            .map(|_| base_rng.random_range(-BACKGROUND_AMPLITUDE..=BACKGROUND_AMPLITUDE))
            .collect();

        let layouts = cell_layouts(p.classes, p.seed)?;
        let (ch, cw) = (p.height / GRID, p.width / GRID);
        let prototypes = layouts
            .iter()
            .enumerate()
            .map(|(c, cells)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, 2, c as u64));
                let mut px: Vec<f64> = background.iter().map(|b| BACKGROUND_LEVEL + b).collect();
                for &cell in cells {
                    let (gr, gc) = (cell / GRID, cell % GRID);
                    for i in gr * ch..(gr + 1) * ch {
                        for j in gc * cw..(gc + 1) * cw {
                            px[i * p.width + j] =
                                BACKGROUND_LEVEL + rng.random_range(-PATCH_AMPLITUDE..=PATCH_AMPLITUDE);
                        }
                    }
                }
                GrayImage::from_parts(p.width, p.height, px)
            })
            .collect();

        let biases = (0..p.subjects)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, 3, s as u64));
                let offset = rng.random_range(-BIAS_OFFSET..=BIAS_OFFSET);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let span = rng.random_range(0.0..=BIAS_SPAN);
                let (gy, gx) = (span * angle.sin() / p.height as f64, span * angle.cos() / p.width as f64);
                let (cy, cx) = ((p.height - 1) as f64 / 2.0, (p.width - 1) as f64 / 2.0);
                GrayImage::from_fn(p.width, p.height, |i, j| {
                    offset + gy * (i as f64 - cy) + gx * (j as f64 - cx)
                })
                .expect("bias field is finite")
            })
            .collect();

        Ok(SyntheticGenerator {
            params,
            prototypes,
            biases,
        })
    }

    pub fn params(&self) -> &SynthParams {
        &self.params
    }

    pub fn prototype(&self, class: usize) -> &GrayImage {
        &self.prototypes[class]
    }

    pub fn subject_bias(&self, subject: usize) -> &GrayImage {
        &self.biases[subject]
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.params.classes)
            .map(|c| match JAFFE_CLASSES.get(c) {
                Some(name) if self.params.classes <= JAFFE_CLASSES.len() => name.to_string(),
                _ => format!("class{c:02}"),
            })
            .collect()
    }

    pub fn subject_name(subject: usize) -> String {
        format!("S{:02}", subject + 1)
    }

    pub fn generate(&self) -> Result<Dataset> {
        let p = &self.params;
        let names = self.class_names();
        let classes: Vec<EmotionClass> =
            names.iter().enumerate().map(|(k, n)| EmotionClass::new(k, n.clone())).collect();
        let subjects: Vec<String> = (0..p.subjects).map(Self::subject_name).collect();
        let noise = Normal::new(0.0, p.noise_sigma)
            .map_err(|e| Error::InvalidParams(format!("noise sigma: {e}")))?;

        let mut samples = Vec::with_capacity(p.subjects * p.classes * p.replicates);
        let mut serial = 0u32;
        for (s, subject) in subjects.iter().enumerate() {
            for class in &classes {
                for r in 0..p.replicates {
                    serial += 1;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, 4, u64::from(serial)));
                    let proto = self.prototype(class.id).pixels();
                    let bias = self.subject_bias(s).pixels();
                    let px = proto
                        .iter()
                        .zip(bias)
                        .map(|(&a, &b)| {
                            let n = if p.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                            (a + b + n).clamp(0.0, 255.0).round()
                        })
                        .collect();
                    let index = r as u32 + 1;
                    let file_name = format_jaffe_filename(subject, &class.name, index, serial, "pgm")
                        .unwrap_or_else(|| format!("{subject}.{}{index}.{serial}.pgm", class.name));
                    samples.push(Sample {
                        subject: subject.clone(),
                        expression: class.clone(),
                        index,
                        file_name,
                        source: ImageSource::Memory(Arc::new(GrayImage::from_parts(p.width, p.height, px))),
                    });
                }
            }
        }
        Dataset::new(samples, classes, subjects)
    }
}

/// Picks `CELLS_PER_CLASS` grid cells per class such that any two classes
/// share at most `MAX_SHARED_CELLS` cells.
fn cell_layouts(classes: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5, 0));
    let mut layouts: Vec<Vec<usize>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while layouts.len() < classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidParams(format!("cannot lay out {classes} distinct classes")));
        }
        let mut cells = rand::seq::index::sample(&mut rng, GRID * GRID, CELLS_PER_CLASS).into_vec();
        cells.sort_unstable();
        let ok = layouts
            .iter()
            .all(|l| l.iter().filter(|c| cells.contains(c)).count() <= MAX_SHARED_CELLS);
        if ok {
            layouts.push(cells);
        }
    }
    Ok(layouts)
}

/// Convenience wrapper: `SyntheticGenerator::new(params)?.generate()`.
pub fn generate_synthetic(params: SynthParams) -> Result<Dataset> {
    SyntheticGenerator::new(params)?.generate()
}
