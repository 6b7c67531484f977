//! Nearest-neighbour classification over a gallery of labeled feature
//! vectors, using either the Min-Max similarity score or plain Euclidean
//! distance.
//!
//! The Min-Max score of two feature values is `(min / max)^alpha`: exactly 1
//! for equal values and shrinking toward 0 as they diverge. Summing it over
//! all positions gives one weight per gallery row, and the row with the
//! largest weight decides the class. Raising `alpha` above 1 pushes poorly
//! matching positions toward 0 so a few outliers cannot dominate the sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::FeatureVector;

/// The seven JAFFE expression classes in canonical order.
pub const JAFFE_CLASSES: [&str; 7] = [
    "anger",
    "disgust",
    "fear",
    "happiness",
    "neutral",
    "sadness",
    "surprise",
];

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmotionClass {
    pub id: usize,
    pub name: String,
}

impl EmotionClass {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        EmotionClass { id, name: name.into() }
    }
}

/// Where a gallery row came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceId {
    /// Index of the sample in its dataset.
    pub sample: usize,
    pub subject: String,
    pub expression: String,
    pub index: u32,
}

/// Labeled training features, one row per training image.
#[derive(Clone, Debug)]
pub struct Gallery {
    features: Vec<f64>,
    row_len: usize,
    labels: Vec<EmotionClass>,
    source_ids: Vec<SourceId>,
}

impl Gallery {
    pub fn new<'a>(
        rows: impl IntoIterator<Item = &'a FeatureVector>,
        labels: Vec<EmotionClass>,
        source_ids: Vec<SourceId>,
    ) -> Result<Self> {
        let mut features = Vec::new();
        let mut row_len = None;
        let mut count = 0;
        for row in rows {
            let expected = *row_len.get_or_insert(row.len());
            if row.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: row.len(),
                });
            }
            features.extend_from_slice(row.values());
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyGallery);
        }
        if labels.len() != count || source_ids.len() != count {
            return Err(Error::InvalidParams(format!(
                "{count} gallery rows but {} labels and {} source ids",
                labels.len(),
                source_ids.len()
            )));
        }
        Ok(Gallery {
            features,
            row_len: row_len.unwrap_or(0),
            labels,
            source_ids,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.features[t * self.row_len..(t + 1) * self.row_len]
    }

    pub fn label(&self, t: usize) -> &EmotionClass {
        &self.labels[t]
    }

    pub fn labels(&self) -> &[EmotionClass] {
        &self.labels
    }

    pub fn source_id(&self, t: usize) -> &SourceId {
        &self.source_ids[t]
    }

    pub fn source_ids(&self) -> &[SourceId] {
        &self.source_ids
    }

    fn check(&self, test: &FeatureVector) -> Result<()> {
        if test.len() != self.row_len {
            return Err(Error::DimensionMismatch {
                expected: self.row_len,
                actual: test.len(),
            });
        }
        Ok(())
    }
}

/// One Min-Max weight per gallery row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub weights: Vec<f64>,
}

impl ScoreVector {
    /// Index of the largest weight; the lowest index wins ties.
    pub fn argmax(&self) -> Option<usize> {
        argbest(&self.weights, |cand, best| cand > best)
    }

    /// Up to `k` `(row, weight)` pairs, best first, ties by row index.
    pub fn top(&self, k: usize) -> Vec<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.weights.len()).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        order.into_iter().take(k).map(|t| (t, self.weights[t])).collect()
    }
}

fn argbest(values: &[f64], better: impl Fn(f64, f64) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (t, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !better(v, b) => {}
            _ => best = Some((t, v)),
        }
    }
    best.map(|(t, _)| t)
}

/// `(min(a, b) / max(a, b))^alpha`, with `0/0` taken as 1.
pub fn minmax_similarity(a: f64, b: f64, alpha: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::NegativeInput(a, b));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(Exponent::new(alpha).similarity(a, b))
}

/// Exponent with an integer fast path; `powi` is exact repeated
/// multiplication and several times cheaper than `powf`.
#[derive(Clone, Copy)]
enum Exponent {
    Int(i32),
    Real(f64),
}

impl Exponent {
    fn new(alpha: f64) -> Self {
        if alpha.fract() == 0.0 && alpha <= 16.0 {
            Exponent::Int(alpha as i32)
        } else {
            Exponent::Real(alpha)
        }
    }

    #[inline(always)]
    fn similarity(self, a: f64, b: f64) -> f64 {
        if a == b {
            return 1.0;
        }
        let ratio = a.min(b) / a.max(b);
        match self {
            Exponent::Int(n) => ratio.powi(n),
            Exponent::Real(x) => ratio.powf(x),
        }
    }
}

fn weight(row: &[f64], test: &[f64], exp: Exponent) -> f64 {
    row.iter().zip(test).map(|(&a, &b)| exp.similarity(a, b)).sum()
}

/// Min-Max weight of `test` against every gallery row.
pub fn score(gallery: &Gallery, test: &FeatureVector, alpha: f64) -> Result<ScoreVector> {
    gallery.check(test)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
    }
    let exp = Exponent::new(alpha);
    let weights = (0..gallery.rows())
        .map(|t| weight(gallery.row(t), test.values(), exp))
        .collect();
    Ok(ScoreVector { weights })
}

#[derive(Clone, Debug)]
pub struct MinMaxMatch {
    pub class: EmotionClass,
    pub scores: ScoreVector,
    /// Gallery row with the largest weight.
    pub row: usize,
}

/// Classifies `test` as the label of the gallery row with the largest
/// Min-Max weight.
pub fn classify_minmax(gallery: &Gallery, test: &FeatureVector, alpha: f64) -> Result<MinMaxMatch> {
    let scores = score(gallery, test, alpha)?;
    let row = scores.argmax().ok_or(Error::EmptyGallery)?;
    Ok(MinMaxMatch {
        class: gallery.label(row).clone(),
        scores,
        row,
    })
}

#[derive(Clone, Debug)]
pub struct EuclideanMatch {
    pub class: EmotionClass,
    /// L2 distance to every gallery row.
    pub distances: Vec<f64>,
    pub row: usize,
}

/// 1-nearest-neighbour by Euclidean distance; lowest row index wins ties.
pub fn classify_nn_euclidean(gallery: &Gallery, test: &FeatureVector) -> Result<EuclideanMatch> {
    gallery.check(test)?;
    let distances: Vec<f64> = (0..gallery.rows())
        .map(|t| {
            gallery
                .row(t)
                .iter()
                .zip(test.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let row = argbest(&distances, |cand, best| cand < best).ok_or(Error::EmptyGallery)?;
    Ok(EuclideanMatch {
        class: gallery.label(row).clone(),
        distances,
        row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec(), 1, values.len()).unwrap()
    }

    fn gallery(rows: &[&[f64]]) -> Gallery {
        let fvs: Vec<_> = rows.iter().map(|r| fv(r)).collect();
        let labels = (0..rows.len()).map(|t| EmotionClass::new(t, format!("c{t}"))).collect();
        let ids = (0..rows.len())
            .map(|t| SourceId {
                sample: t,
                subject: "S".into(),
                expression: format!("c{t}"),
                index: 1,
            })
            .collect();
        Gallery::new(&fvs, labels, ids).unwrap()
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(minmax_similarity(5.0, 5.0, 3.0).unwrap(), 1.0);
        assert_eq!(minmax_similarity(1.0, 2.0, 3.0).unwrap(), 0.125);
        assert_eq!(minmax_similarity(2.0, 1.0, 3.0).unwrap(), 0.125);
        assert_eq!(minmax_similarity(0.0, 0.0, 3.0).unwrap(), 1.0);
        assert_eq!(minmax_similarity(0.0, 4.0, 3.0).unwrap(), 0.0);
        assert!((minmax_similarity(1.0, 4.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(minmax_similarity(-1.0, 2.0, 3.0), Err(Error::NegativeInput(..))));
        assert!(minmax_similarity(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn score_examples() {
        let g = gallery(&[&[1.0; 4], &[2.0; 4]]);
        let s = score(&g, &fv(&[2.0; 4]), 3.0).unwrap();
        assert_eq!(s.weights, vec![0.5, 4.0]);

        let s1 = score(&g, &fv(&[3.0, 1.0, 2.0, 0.5]), 1.0).unwrap();
        let s3 = score(&g, &fv(&[3.0, 1.0, 2.0, 0.5]), 3.0).unwrap();
        for (a, b) in s1.weights.iter().zip(&s3.weights) {
            assert!(b <= a);
        }
        assert!(matches!(
            score(&g, &fv(&[1.0; 3]), 3.0),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn exact_match_wins() {
        let g = gallery(&[&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &[0.5, 0.5, 0.5]]);
        let m = classify_minmax(&g, &fv(&[3.0, 2.0, 1.0]), 3.0).unwrap();
        assert_eq!(m.row, 1);
        assert_eq!(m.class.name, "c1");
        assert_eq!(m.scores.weights[1], 3.0);
    }

    #[test]
    fn ties_go_to_lowest_row() {
        let g = gallery(&[&[1.0, 1.0], &[2.0, 2.0], &[1.0, 1.0]]);
        assert_eq!(classify_minmax(&g, &fv(&[1.0, 1.0]), 3.0).unwrap().row, 0);
        let g = gallery(&[&[0.0], &[4.0]]);
        assert_eq!(classify_nn_euclidean(&g, &fv(&[2.0])).unwrap().row, 0);
        // all-equal scores
        let g = gallery(&[&[0.0, 5.0], &[5.0, 0.0]]);
        assert_eq!(classify_minmax(&g, &fv(&[5.0, 5.0]), 3.0).unwrap().row, 0);
    }

    #[test]
    fn euclidean_examples() {
        let g = gallery(&[&[0.0], &[10.0]]);
        let m = classify_nn_euclidean(&g, &fv(&[2.0])).unwrap();
        assert_eq!((m.row, m.class.name.as_str()), (0, "c0"));
        assert_eq!(m.distances, vec![2.0, 8.0]);
        let m = classify_nn_euclidean(&g, &fv(&[10.0])).unwrap();
        assert_eq!((m.row, m.distances[1]), (1, 0.0));
    }

    #[test]
    fn top_k_orders_by_weight() {
        let s = ScoreVector { weights: vec![1.0, 3.0, 2.0, 3.0] };
        assert_eq!(s.top(3), vec![(1, 3.0), (3, 3.0), (2, 2.0)]);
        assert_eq!(s.top(10).len(), 4);
    }

    #[test]
    fn gallery_construction_errors() {
        let empty: Vec<FeatureVector> = vec![];
        assert!(matches!(Gallery::new(&empty, vec![], vec![]), Err(Error::EmptyGallery)));
        let rows = [fv(&[1.0, 2.0]), fv(&[1.0])];
        let labels = vec![EmotionClass::new(0, "a"); 2];
        let ids = vec![
            SourceId { sample: 0, subject: "s".into(), expression: "a".into(), index: 1 };
            2
        ];
        assert!(matches!(
            Gallery::new(&rows, labels, ids),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
