//! Device-side matching of scarce local data against the directory, producing
//! the directory weight vector that is the only thing a device uploads.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::directory::Directory;
use crate::error::{DeltaError, Result};
use crate::linalg;
use crate::model::{per_sample_gradient, GradientVector, LinearClassifier};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
/// Uploaded weights keep this many significant decimal digits.
pub const UPLOAD_SIGNIFICANT_DIGITS: usize = 6;

fn round_significant(x: f64, digits: usize) -> f64 {
    format!("{:.*e}", digits - 1, x)
        .parse()
        .expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Negated distance between the per-sample head gradients.
    Gradient,
    /// Negated Euclidean distance between features.
    FeatureDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub temperature: f64,
    pub mode: MatchMode,
    pub similarity: SimilarityMode,
    /// Only let a sample match entries carrying its own label.
    pub label_aware: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            temperature: DEFAULT_TEMPERATURE,
            mode: MatchMode::Soft,
            similarity: SimilarityMode::FeatureDistance,
            label_aware: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DeltaError::config("temperature must be positive"));
        }
        Ok(())
    }
}

/// Accumulated directory weights for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWeights {
    pub context_id: u32,
    /// Indexed by cluster id; sums to `sample_count`.
    pub weights: Vec<f64>,
    pub sample_count: usize,
}

impl ContextWeights {
    /// Weights scaled to sum to one.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        if total <= 0.0 {
            return vec![0.0; self.weights.len()];
        }
        self.weights.iter().map(|w| w / total).collect()
    }

    /// Upload form: normalized weights keyed by cluster id, zero entries
    /// dropped. Entries below `min_weight` are dropped too and the rest
    /// renormalized, then rounded to [`UPLOAD_SIGNIFICANT_DIGITS`] digits so
    /// each entry encodes in a handful of bytes.
    pub fn to_upload(&self, min_weight: f64) -> UploadedWeights {
        let norm = self.normalized();
        let kept: Vec<(usize, f64)> = norm
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0 && w >= min_weight)
            .collect();
        let total: f64 = kept.iter().map(|(_, w)| w).sum();
        let weights = kept
            .into_iter()
            .map(|(c, w)| {
                let w = if total > 0.0 { w / total } else { w };
                (c as u32, round_significant(w, UPLOAD_SIGNIFICANT_DIGITS))
            })
            .collect();
        UploadedWeights {
            context_id: self.context_id,
            sample_count: self.sample_count,
            weights,
        }
    }
}

/// Weight upload payload: `{"context_id", "sample_count", "weights": {"<cluster_id>": w}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadedWeights {
    pub context_id: u32,
    pub sample_count: usize,
    pub weights: BTreeMap<u32, f64>,
}

impl UploadedWeights {
    /// Dense normalized vector over a directory of `len` entries.
    pub fn dense(&self, len: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; len];
        for (&c, &w) in &self.weights {
            let slot = out
                .get_mut(c as usize)
                .ok_or_else(|| DeltaError::config(format!("uploaded weight for unknown cluster {c}")))?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(DeltaError::NonFinite("uploaded weight"));
            }
            *slot = w;
        }
        Ok(out)
    }

    /// Back to accumulated form (sum = `sample_count`).
    pub fn to_context_weights(&self, len: usize) -> Result<ContextWeights> {
        let scale = self.sample_count as f64;
        Ok(ContextWeights {
            context_id: self.context_id,
            weights: self.dense(len)?.into_iter().map(|w| w * scale).collect(),
            sample_count: self.sample_count,
        })
    }
}

/// Per-directory precomputation shared by all samples of a matching pass.
struct Scorer<'a> {
    directory: &'a Directory,
    model: &'a LinearClassifier,
    cfg: &'a MatchConfig,
    entry_grads: Option<Vec<GradientVector>>,
}

impl<'a> Scorer<'a> {
    fn new(directory: &'a Directory, model: &'a LinearClassifier, cfg: &'a MatchConfig) -> Result<Self> {
        if directory.is_empty() {
            return Err(DeltaError::Empty("directory"));
        }
        cfg.validate()?;
        let entry_grads = match cfg.similarity {
            SimilarityMode::Gradient => Some(
                directory
                    .entries
                    .iter()
                    .map(|e| per_sample_gradient(model, &LabeledSample::new(e.medoid_feature.clone(), e.label)))
                    .collect::<Result<_>>()?,
            ),
            SimilarityMode::FeatureDistance => None,
        };
        Ok(Scorer {
            directory,
            model,
            cfg,
            entry_grads,
        })
    }

    fn scores(&self, sample: &LabeledSample) -> Result<Vec<f64>> {
        if sample.feature.dim() != self.directory.feature_dim {
            return Err(DeltaError::DimensionMismatch {
                expected: self.directory.feature_dim,
                got: sample.feature.dim(),
            });
        }
        let own = match &self.entry_grads {
            Some(_) => Some(per_sample_gradient(self.model, sample)?),
            None => None,
        };
        Ok(self
            .directory
            .entries
            .iter()
            .enumerate()
            .map(|(c, e)| {
                if self.cfg.label_aware && e.label != sample.label {
                    return f64::NEG_INFINITY;
                }
                match (&own, &self.entry_grads) {
                    (Some(g), Some(eg)) => -g.distance(&eg[c]),
                    _ => -linalg::distance(sample.feature.as_slice(), e.medoid_feature.as_slice()),
                }
            })
            .collect())
    }
}

/// One similarity score per directory entry; excluded entries score `-inf`.
pub fn sample_scores(
    sample: &LabeledSample,
    directory: &Directory,
    model: &LinearClassifier,
    cfg: &MatchConfig,
) -> Result<Vec<f64>> {
    Scorer::new(directory, model, cfg)?.scores(sample)
}

fn hard_from_scores(scores: &[f64], label: usize) -> Result<usize> {
    match linalg::argmax(scores) {
        Some(c) if scores[c] > f64::NEG_INFINITY => Ok(c),
        _ => Err(DeltaError::NoMatchingEntry { label }),
    }
}

fn soft_from_scores(scores: &[f64], temperature: f64, label: usize) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    linalg::softmax(&scaled).ok_or(DeltaError::NoMatchingEntry { label })
}

/// Cluster id of the most similar entry; ties go to the lowest id.
pub fn hard_match(
    sample: &LabeledSample,
    directory: &Directory,
    model: &LinearClassifier,
    cfg: &MatchConfig,
) -> Result<usize> {
    hard_from_scores(&sample_scores(sample, directory, model, cfg)?, sample.label)
}

/// Temperature-scaled softmax over the sample's scores.
pub fn soft_match(
    sample: &LabeledSample,
    directory: &Directory,
    model: &LinearClassifier,
    cfg: &MatchConfig,
) -> Result<Vec<f64>> {
    soft_from_scores(
        &sample_scores(sample, directory, model, cfg)?,
        cfg.temperature,
        sample.label,
    )
}

/// Accumulates every device sample's match increment into directory
/// weights. Increments are computed in parallel and summed in sample order.
pub fn compute_context_weights(
    context_id: u32,
    device_data: &Dataset,
    directory: &Directory,
    model: &LinearClassifier,
    cfg: &MatchConfig,
) -> Result<ContextWeights> {
    if device_data.is_empty() {
        return Err(DeltaError::Empty("device dataset"));
    }
    let scorer = Scorer::new(directory, model, cfg)?;
    let increments: Vec<Vec<f64>> = device_data
        .samples
        .par_iter()
        .map(|s| {
            let scores = scorer.scores(s)?;
            match cfg.mode {
                MatchMode::Soft => soft_from_scores(&scores, cfg.temperature, s.label),
                MatchMode::Hard => {
                    let mut one_hot = vec![0.0; scores.len()];
                    one_hot[hard_from_scores(&scores, s.label)?] = 1.0;
                    Ok(one_hot)
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut weights = vec![0.0; directory.len()];
    for inc in &increments {
        linalg::axpy(&mut weights, 1.0, inc);
    }
    Ok(ContextWeights {
        context_id,
        weights,
        sample_count: device_data.len(),
    })
}
