//! Cloud-side directory construction: per-label Lloyd k-means, medoid
//! selection and cluster dispersion.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector};
use crate::error::{DeltaError, Result};
use crate::linalg;

pub const DEFAULT_CLUSTERS_PER_LABEL: usize = 20;
pub const DEFAULT_KMEANS_TOL: f64 = 1e-6;
pub const DEFAULT_KMEANS_MAX_ITERS: usize = 100;

/// Cluster membership of every point plus the cluster centres.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id of each point, by point index.
    pub cluster_of: Vec<usize>,
    pub centers: Vec<FeatureVector>,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.centers.len()
    }

    /// Point indices grouped by cluster id, in ascending point order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centers.len()];
        for (i, &c) in self.cluster_of.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Lloyd's algorithm result with the objective recorded after every
/// assignment step.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub assignment: ClusterAssignment,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = linalg::squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| linalg::squared_distance(p, &centers[0]))
        .collect();
    let mut chosen = vec![false; n];
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // All remaining points coincide with a centre; take any unused one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen[*i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(linalg::squared_distance(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Moves the point farthest from its centre into each empty cluster, taking
/// only from clusters that keep at least one member.
fn repair_empty(points: &[&[f64]], labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = linalg::squared_distance(p, &centers[labels[i]]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("k <= n guarantees a donor cluster");
        labels[i] = empty;
        centers[empty] = points[i].to_vec();
    }
}

/// Lloyd's k-means with k-means++ seeding. Stops when no centre moves by
/// `tol` or more, or after `max_iters` update rounds.
pub fn kmeans_fit(features: &[FeatureVector], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(DeltaError::config("k must be at least 1"));
    }
    if max_iters == 0 {
        return Err(DeltaError::config("max_iters must be at least 1"));
    }
    let n = features.len();
    if k > n {
        return Err(DeltaError::TooFewPoints { k, points: n });
    }
    let dim = features[0].dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(DeltaError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    let points: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(&points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            labels[i] = c;
            objective += d;
        }
        trace.push(objective);
        repair_empty(&points, &mut labels, &mut centers);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            linalg::axpy(&mut sums[labels[i]], 1.0, p);
            counts[labels[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            sums[c].iter_mut().for_each(|v| *v *= inv);
            shift = shift.max(linalg::distance(&sums[c], &centers[c]));
            centers[c] = std::mem::take(&mut sums[c]);
        }
        if shift < tol {
            break;
        }
    }
    // Final assignment against the settled centres.
    let mut objective = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, &centers);
        labels[i] = c;
        objective += d;
    }
    trace.push(objective);
    repair_empty(&points, &mut labels, &mut centers);

    let centers = centers
        .into_iter()
        .map(FeatureVector::new)
        .collect::<Result<Vec<_>>>()?;
    Ok(KMeansFit {
        assignment: ClusterAssignment {
            cluster_of: labels,
            centers,
        },
        iterations,
        objective_trace: trace,
    })
}

pub fn kmeans_cluster(
    features: &[FeatureVector],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    kmeans_fit(features, k, seed, max_iters, tol).map(|f| f.assignment)
}

/// Index of the member closest to `center`; ties go to the lowest index.
pub fn select_medoid(cluster_features: &[FeatureVector], center: &FeatureVector) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in cluster_features.iter().enumerate() {
        let d = linalg::squared_distance(f.as_slice(), center.as_slice());
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(DeltaError::Empty("cluster"))
}

/// Mean Euclidean distance of the members to the medoid.
pub fn cluster_dispersion(cluster_features: &[FeatureVector], medoid: &FeatureVector) -> Result<f64> {
    if cluster_features.is_empty() {
        return Err(DeltaError::Empty("cluster"));
    }
    let total: f64 = cluster_features
        .iter()
        .map(|f| linalg::distance(f.as_slice(), medoid.as_slice()))
        .sum();
    Ok(total / cluster_features.len() as f64)
}

/// One directory element: a real cloud sample standing in for its cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectoryEntry {
    pub cluster_id: usize,
    pub label: usize,
    #[serde(rename = "medoid")]
    pub medoid_feature: FeatureVector,
    pub dispersion: f64,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directory {
    /// Ordered by label, then by cluster index within the label; `entries[i]`
    /// has `cluster_id == i`.
    pub entries: Vec<DirectoryEntry>,
    pub feature_dim: usize,
    pub class_count: usize,
}

impl Directory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, cluster_id: usize) -> Option<&DirectoryEntry> {
        self.entries.get(cluster_id)
    }

    /// Checks the structural invariants after loading or decoding.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.cluster_id != i {
                return Err(DeltaError::config(format!(
                    "directory entry {i} has cluster_id {}",
                    e.cluster_id
                )));
            }
            if e.medoid_feature.dim() != self.feature_dim {
                return Err(DeltaError::DimensionMismatch {
                    expected: self.feature_dim,
                    got: e.medoid_feature.dim(),
                });
            }
            if e.label >= self.class_count {
                return Err(DeltaError::LabelOutOfRange {
                    label: e.label,
                    classes: self.class_count,
                });
            }
            if !(e.dispersion >= 0.0 && e.dispersion.is_finite()) || e.member_count == 0 {
                return Err(DeltaError::config(format!(
                    "directory entry {i} has invalid dispersion or member count"
                )));
            }
        }
        Ok(())
    }

    /// `Σ_c w_c · φ(x̄_c)` for a weight vector indexed by cluster id.
    pub fn weighted_mean(&self, weights: &[f64]) -> Result<FeatureVector> {
        if weights.len() != self.entries.len() {
            return Err(DeltaError::DimensionMismatch {
                expected: self.entries.len(),
                got: weights.len(),
            });
        }
        let mut acc = vec![0.0; self.feature_dim];
        for (e, &w) in self.entries.iter().zip(weights) {
            if w != 0.0 {
                linalg::axpy(&mut acc, w, e.medoid_feature.as_slice());
            }
        }
        FeatureVector::new(acc)
    }

    /// Line-delimited directory records, one entry per line.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut writer, e).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads directory records. `class_count` defaults to one past the
    /// largest label seen.
    pub fn read_jsonl<R: BufRead>(reader: R, class_count: Option<usize>) -> Result<Directory> {
        let mut entries: Vec<DirectoryEntry> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|e| DeltaError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(e);
        }
        let feature_dim = entries
            .first()
            .map(|e| e.medoid_feature.dim())
            .ok_or(DeltaError::Empty("directory"))?;
        let class_count = class_count.unwrap_or_else(|| entries.iter().map(|e| e.label + 1).max().unwrap_or(0));
        let dir = Directory {
            entries,
            feature_dim,
            class_count,
        };
        dir.validate()?;
        Ok(dir)
    }
}

/// Seed used for the k-means run of one label.
fn label_seed(seed: u64, label: usize) -> u64 {
    seed ^ (label as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Clusters each label's cloud samples separately and turns every cluster
/// into a directory entry. Returns the directory and the cluster id of every
/// cloud sample.
pub fn build_directory(
    cloud: &Dataset,
    clusters_per_label: usize,
    seed: u64,
) -> Result<(Directory, ClusterAssignment)> {
    if clusters_per_label == 0 {
        return Err(DeltaError::config("clusters_per_label must be at least 1"));
    }
    let dim = cloud.validate(None)?;
    let labels = cloud.labels();
    let class_count = labels.last().map_or(0, |l| l + 1);

    let per_label: Vec<(Vec<usize>, KMeansFit)> = labels
        .par_iter()
        .map(|&label| {
            let idx: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.samples[i].label == label).collect();
            let feats: Vec<FeatureVector> = idx.iter().map(|&i| cloud.samples[i].feature.clone()).collect();
            let k = clusters_per_label.min(feats.len());
            let fit = kmeans_fit(
                &feats,
                k,
                label_seed(seed, label),
                DEFAULT_KMEANS_MAX_ITERS,
                DEFAULT_KMEANS_TOL,
            )?;
            Ok((idx, fit))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut cluster_of = vec![usize::MAX; cloud.len()];
    let mut centers = Vec::new();
    for (&label, (idx, fit)) in labels.iter().zip(per_label) {
        let base = entries.len();
        for (local, members) in fit.assignment.members().into_iter().enumerate() {
            let feats: Vec<FeatureVector> = members.iter().map(|&m| cloud.samples[idx[m]].feature.clone()).collect();
            let center = &fit.assignment.centers[local];
            let medoid = feats[select_medoid(&feats, center)?].clone();
            let dispersion = cluster_dispersion(&feats, &medoid)?;
            for &m in &members {
                cluster_of[idx[m]] = base + local;
            }
            entries.push(DirectoryEntry {
                cluster_id: base + local,
                label,
                medoid_feature: medoid,
                dispersion,
                member_count: members.len(),
            });
            centers.push(center.clone());
        }
    }
    debug_assert!(cluster_of.iter().all(|&c| c != usize::MAX));
    Ok((
        Directory {
            entries,
            feature_dim: dim,
            class_count,
        },
        ClusterAssignment { cluster_of, centers },
    ))
}
