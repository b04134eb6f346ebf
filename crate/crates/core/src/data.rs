//! Embedding-level data: feature vectors, labeled samples and datasets.
//!
//! Raw inputs never appear in this crate. Every sample is represented by the
//! output of a frozen feature extractor, so scenario files carry embeddings
//! directly.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DeltaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DeltaError::NonFinite("feature vector"));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FeatureVector(self.0.iter().map(|v| v * factor).collect())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub feature: FeatureVector,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(feature: FeatureVector, label: usize) -> Self {
        LabeledSample { feature, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, samples: Vec<LabeledSample>) -> Self {
        Dataset { id: id.into(), samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension of the first sample, if any.
    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.feature.dim())
    }

    /// Checks the dataset is non-empty, shares one feature dimension and
    /// (when `classes` is given) carries labels in range.
    pub fn validate(&self, classes: Option<usize>) -> Result<usize> {
        let dim = self.dim().ok_or(DeltaError::Empty("dataset"))?;
        for s in &self.samples {
            if s.feature.dim() != dim {
                return Err(DeltaError::DimensionMismatch {
                    expected: dim,
                    got: s.feature.dim(),
                });
            }
            if let Some(c) = classes {
                if s.label >= c {
                    return Err(DeltaError::LabelOutOfRange {
                        label: s.label,
                        classes: c,
                    });
                }
            }
        }
        Ok(dim)
    }

    pub fn mean_feature(&self) -> Result<FeatureVector> {
        let dim = self.dim().ok_or(DeltaError::Empty("dataset"))?;
        Ok(FeatureVector(crate::linalg::mean_of(
            self.samples.iter().map(|s| s.feature.as_slice()),
            dim,
        )))
    }

    /// Sorted list of distinct labels.
    pub fn labels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn concat(&self, other: &Dataset, id: impl Into<String>) -> Dataset {
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::new(id, samples)
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    label: usize,
    feature: Vec<f64>,
}

/// Reads line-delimited `{"id", "label", "feature"}` records. Blank lines are
/// skipped; all features must share one dimension.
pub fn read_embeddings<R: BufRead>(reader: R, dataset_id: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| DeltaError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let d = *dim.get_or_insert(rec.feature.len());
        if rec.feature.len() != d {
            return Err(DeltaError::Parse {
                line: i + 1,
                reason: format!(
                    "record {:?} has dimension {}, expected {}",
                    rec.id,
                    rec.feature.len(),
                    d
                ),
            });
        }
        let feature = FeatureVector::new(rec.feature).map_err(|e| DeltaError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        samples.push(LabeledSample::new(feature, rec.label));
    }
    Ok(Dataset::new(dataset_id, samples))
}

/// Writes a dataset as embedding records with ids `<dataset id>/<index>`.
pub fn write_embeddings<W: Write>(mut writer: W, data: &Dataset) -> Result<()> {
    for (i, s) in data.samples.iter().enumerate() {
        let rec = EmbeddingRecord {
            id: format!("{}/{}", data.id, i),
            label: s.label,
            feature: s.feature.as_slice().to_vec(),
        };
        serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded Gaussian random projection from a raw input space onto the
/// embedding space. Only used to synthesise embeddings; the extractor is
/// frozen once built.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    in_dim: usize,
    out_dim: usize,
    matrix: Vec<f64>,
}

impl RandomProjection {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (out_dim as f64).sqrt();
        let matrix = (0..in_dim * out_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        RandomProjection {
            in_dim,
            out_dim,
            matrix,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn extract(&self, raw: &[f64]) -> Result<FeatureVector> {
        if raw.len() != self.in_dim {
            return Err(DeltaError::DimensionMismatch {
                expected: self.in_dim,
                got: raw.len(),
            });
        }
        let out = self
            .matrix
            .chunks_exact(self.in_dim)
            .map(|row| crate::linalg::dot(row, raw))
            .collect();
        FeatureVector::new(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_non_finite_features() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn embeddings_round_trip_through_jsonl() {
        let data = Dataset::new(
            "toy",
            vec![
                LabeledSample::new(fv(&[0.1, -2.5]), 0),
                LabeledSample::new(fv(&[1e-300, 3.0]), 4),
            ],
        );
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &data).unwrap();
        let back = read_embeddings(buf.as_slice(), "toy").unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn loader_rejects_ragged_dimensions() {
        let text = "{\"id\":\"a\",\"label\":0,\"feature\":[1.0,2.0]}\n\n{\"id\":\"b\",\"label\":1,\"feature\":[1.0]}\n";
        match read_embeddings(text.as_bytes(), "x") {
            Err(DeltaError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validate_checks_labels() {
        let data = Dataset::new("d", vec![LabeledSample::new(fv(&[0.0]), 3)]);
        assert_eq!(data.validate(Some(4)).unwrap(), 1);
        assert!(matches!(
            data.validate(Some(3)),
            Err(DeltaError::LabelOutOfRange { .. })
        ));
        assert!(Dataset::new("e", vec![]).validate(None).is_err());
    }

    #[test]
    fn projection_is_seeded_and_linear() {
        let a = RandomProjection::new(5, 3, 9);
        let b = RandomProjection::new(5, 3, 9);
        let x = [1.0, 0.5, -0.25, 2.0, 0.0];
        assert_eq!(a.extract(&x).unwrap(), b.extract(&x).unwrap());
        let y: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        let fx = a.extract(&x).unwrap();
        let fy = a.extract(&y).unwrap();
        for (u, v) in fx.as_slice().iter().zip(fy.as_slice()) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
        assert!(a.extract(&[1.0]).is_err());
    }
}
