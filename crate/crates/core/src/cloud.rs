//! Cloud-side sampling: inter-cluster size allocation, intra-cluster sampling
//! probabilities (plain and past-aware), sample drawing and importance
//! reweighting.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, LabeledSample};
use crate::directory::{ClusterAssignment, Directory};
use crate::error::{DeltaError, Result};
use crate::linalg;

pub const DEFAULT_BUDGET_PER_CLASS: usize = 25;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    With,
    Without,
}

/// How the distance to past contexts enters the sampling probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastForm {
    /// `sqrt(d_c² + α·d_past²)`
    RootSumSquares,
    /// `d_c + α·d_past`
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub budget_per_class: usize,
    pub alpha: f64,
    /// Relative floor added to every sampling magnitude; the absolute floor
    /// of a cluster is `epsilon_floor · (1 + mean magnitude)`.
    pub epsilon_floor: f64,
    pub replacement: Replacement,
    pub past_form: PastForm,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            budget_per_class: DEFAULT_BUDGET_PER_CLASS,
            alpha: DEFAULT_ALPHA,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            replacement: Replacement::With,
            past_form: PastForm::RootSumSquares,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_per_class == 0 {
            return Err(DeltaError::config("budget_per_class must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DeltaError::config("alpha must be non-negative"));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor.is_finite()) {
            return Err(DeltaError::config("epsilon_floor must be positive"));
        }
        Ok(())
    }
}

/// Surrogate for the feature mean of all past device data: the average of
/// the weighted-directory means of the past contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct PastContextSummary {
    pub mean_past_feature: FeatureVector,
}

impl PastContextSummary {
    /// `None` when there is no past context.
    pub fn from_weight_history(history: &[Vec<f64>], directory: &Directory) -> Result<Option<Self>> {
        if history.is_empty() {
            return Ok(None);
        }
        let mut acc = vec![0.0; directory.feature_dim];
        for w in history {
            let m = directory.weighted_mean(w)?;
            linalg::axpy(&mut acc, 1.0 / history.len() as f64, m.as_slice());
        }
        Ok(Some(PastContextSummary {
            mean_past_feature: FeatureVector::new(acc)?,
        }))
    }
}

/// Hamilton apportionment: integer parts of the quotas, then one extra unit
/// each to the largest remainders (lowest index on ties). Only entries with
/// a positive share can receive units.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().filter(|s| **s > 0.0).sum();
    if sum <= 0.0 || total == 0 {
        return vec![0; shares.len()];
    }
    let quotas: Vec<f64> = shares
        .iter()
        .map(|&s| if s > 0.0 { total as f64 * s / sum } else { 0.0 })
        .collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).filter(|&i| shares[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    // Rounding can overshoot by a unit when quotas are just below integers.
    let mut over = out.iter().sum::<usize>().saturating_sub(total);
    for &i in order.iter().rev() {
        if over == 0 {
            break;
        }
        if out[i] > 0 {
            out[i] -= 1;
            over -= 1;
        }
    }
    out
}

/// Splits `budget` across clusters in proportion to `w_c · dispersion_c`.
/// Zero dispersion is replaced by the epsilon floor. When the budget covers
/// every matched cluster, a cluster that rounding left empty takes one draw
/// from the cluster holding the most draws per unit share, so no matched
/// cluster drops out of the estimate. Without replacement no cluster
/// receives more than its member count; the excess is reapportioned.
pub fn allocate_sizes(
    weights: &[f64],
    directory: &Directory,
    budget: usize,
    cfg: &SamplingConfig,
) -> Result<Vec<usize>> {
    if budget == 0 {
        return Err(DeltaError::config("budget must be at least 1"));
    }
    if weights.len() != directory.len() {
        return Err(DeltaError::DimensionMismatch {
            expected: directory.len(),
            got: weights.len(),
        });
    }
    let mut shares: Vec<f64> = weights
        .iter()
        .zip(&directory.entries)
        .map(|(&w, e)| {
            if w > 0.0 {
                let disp = if e.dispersion > 0.0 {
                    e.dispersion
                } else {
                    cfg.epsilon_floor
                };
                w * disp
            } else {
                0.0
            }
        })
        .collect();
    let matched = shares.iter().filter(|s| **s > 0.0).count();
    if matched == 0 {
        return Err(DeltaError::NoMatchedClusters);
    }
    let original = shares.clone();
    let cover = budget >= matched;
    let fill_empty = |mut sizes: Vec<usize>| -> Vec<usize> {
        if !cover {
            return sizes;
        }
        while let Some(empty) = (0..sizes.len()).find(|&c| original[c] > 0.0 && sizes[c] == 0) {
            let donor = (0..sizes.len())
                .filter(|&c| sizes[c] >= 2)
                .max_by(|&a, &b| {
                    (sizes[a] as f64 / original[a])
                        .total_cmp(&(sizes[b] as f64 / original[b]))
                        .then(b.cmp(&a))
                })
                .expect("budget >= matched leaves a cluster with two draws");
            sizes[donor] -= 1;
            sizes[empty] = 1;
        }
        sizes
    };

    if cfg.replacement == Replacement::With {
        return Ok(fill_empty(largest_remainder(&shares, budget)));
    }

    let capacity: usize = shares
        .iter()
        .zip(&directory.entries)
        .filter(|(s, _)| **s > 0.0)
        .map(|(_, e)| e.member_count)
        .sum();
    if capacity < budget {
        return Err(DeltaError::config(format!(
            "budget {budget} exceeds the {capacity} members of the matched clusters"
        )));
    }
    let mut sizes = vec![0usize; shares.len()];
    let mut remaining = budget;
    loop {
        if remaining == 0 {
            return Ok(fill_empty(sizes));
        }
        let alloc = largest_remainder(&shares, remaining);
        let mut capped = false;
        for (c, &n) in alloc.iter().enumerate() {
            let cap = directory.entries[c].member_count;
            if shares[c] > 0.0 && n >= cap {
                sizes[c] = cap;
                remaining -= cap;
                shares[c] = 0.0;
                capped = true;
            }
        }
        if !capped {
            for (s, n) in sizes.iter_mut().zip(alloc) {
                *s += n;
            }
            return Ok(fill_empty(sizes));
        }
    }
}

fn normalize_magnitudes(mut mags: Vec<f64>, epsilon_floor: f64) -> Vec<f64> {
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    let floor = epsilon_floor * (1.0 + mean);
    mags.iter_mut().for_each(|m| *m += floor);
    let total: f64 = mags.iter().sum();
    mags.iter_mut().for_each(|m| *m /= total);
    mags
}

/// `p_i ∝ ‖φ(x_i) − φ(x̄_c)‖ + floor`.
pub fn intra_cluster_probs(
    cluster_members: &[FeatureVector],
    medoid: &FeatureVector,
    epsilon_floor: f64,
) -> Result<Vec<f64>> {
    if cluster_members.is_empty() {
        return Err(DeltaError::Empty("cluster"));
    }
    let mags = cluster_members
        .iter()
        .map(|f| linalg::distance(f.as_slice(), medoid.as_slice()))
        .collect();
    Ok(normalize_magnitudes(mags, epsilon_floor))
}

fn past_magnitude(d_c: f64, d_p: f64, alpha: f64, form: PastForm) -> f64 {
    match form {
        PastForm::RootSumSquares => (d_c * d_c + alpha * d_p * d_p).sqrt(),
        PastForm::Additive => d_c + alpha * d_p,
    }
}

/// Past-aware sampling probabilities that also favour members far from the
/// past-context mean.
pub fn reoptimized_probs(
    cluster_members: &[FeatureVector],
    medoid: &FeatureVector,
    past: &PastContextSummary,
    alpha: f64,
    form: PastForm,
    epsilon_floor: f64,
) -> Result<Vec<f64>> {
    if cluster_members.is_empty() {
        return Err(DeltaError::Empty("cluster"));
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(DeltaError::config("alpha must be non-negative"));
    }
    let mags = cluster_members
        .iter()
        .map(|f| {
            let d_c = linalg::distance(f.as_slice(), medoid.as_slice());
            let d_p = linalg::distance(f.as_slice(), past.mean_past_feature.as_slice());
            past_magnitude(d_c, d_p, alpha, form)
        })
        .collect();
    Ok(normalize_magnitudes(mags, epsilon_floor))
}

/// `u_i = w_c / (|S_c| · |D_c| · p_i)`: makes `Σ u_i φ(x_i)` over the cluster's
/// draws an unbiased estimate of `w_c` times the cluster feature mean.
pub fn importance_weight(w_c: f64, plan_size: usize, member_count: usize, p_i: f64) -> Result<f64> {
    if p_i.is_nan() || p_i <= 0.0 {
        return Err(DeltaError::NonPositiveProbability(p_i));
    }
    if plan_size == 0 || member_count == 0 {
        return Err(DeltaError::config("plan size and member count must be positive"));
    }
    Ok(w_c / (plan_size as f64 * member_count as f64 * p_i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPlan {
    pub cluster_id: usize,
    pub weight: f64,
    pub size: usize,
    /// Cloud indices of the members, ascending.
    pub members: Vec<usize>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub context_id: u32,
    /// One entry per matched cluster (`w_c > 0`), ascending cluster id.
    pub clusters: Vec<ClusterPlan>,
    pub total_size: usize,
    /// Feature vectors read while building the plan.
    pub feature_reads: usize,
}

impl SamplingPlan {
    /// Dense `|S_c|` over a directory of `len` entries.
    pub fn sizes(&self, len: usize) -> Vec<usize> {
        let mut out = vec![0; len];
        for c in &self.clusters {
            out[c.cluster_id] = c.size;
        }
        out
    }
}

/// Number of classes whose directory entries carry positive weight.
pub fn weighted_class_count(weights: &[f64], directory: &Directory) -> usize {
    let mut labels: Vec<usize> = directory
        .entries
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(e, _)| e.label)
        .collect();
    labels.sort_unstable();
    labels.dedup();
    labels.len()
}

/// Full sampling scheme for one context from normalized directory weights.
/// The budget is `budget_per_class` times the number of weighted classes.
/// Reads each member of a matched cluster once.
pub fn build_plan(
    context_id: u32,
    weights: &[f64],
    directory: &Directory,
    assignment: &ClusterAssignment,
    cloud: &Dataset,
    past: Option<&PastContextSummary>,
    cfg: &SamplingConfig,
) -> Result<SamplingPlan> {
    cfg.validate()?;
    if assignment.cluster_of.len() != cloud.len() {
        return Err(DeltaError::DimensionMismatch {
            expected: cloud.len(),
            got: assignment.cluster_of.len(),
        });
    }
    let budget = cfg.budget_per_class * weighted_class_count(weights, directory);
    let sizes = allocate_sizes(weights, directory, budget, cfg)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); directory.len()];
    for (i, &c) in assignment.cluster_of.iter().enumerate() {
        if weights[c] > 0.0 {
            members[c].push(i);
        }
    }
    let past = past.filter(|_| cfg.alpha > 0.0);

    let clusters: Vec<ClusterPlan> = members
        .into_par_iter()
        .enumerate()
        .filter(|(c, _)| weights[*c] > 0.0)
        .map(|(c, idx)| {
            let medoid = directory.entries[c].medoid_feature.as_slice();
            if idx.is_empty() {
                return Err(DeltaError::Empty("cluster"));
            }
            let mags = idx
                .iter()
                .map(|&i| {
                    let f = cloud.samples[i].feature.as_slice();
                    let d_c = linalg::distance(f, medoid);
                    match past {
                        Some(p) => {
                            let d_p = linalg::distance(f, p.mean_past_feature.as_slice());
                            past_magnitude(d_c, d_p, cfg.alpha, cfg.past_form)
                        }
                        None => d_c,
                    }
                })
                .collect();
            Ok(ClusterPlan {
                cluster_id: c,
                weight: weights[c],
                size: sizes[c],
                probs: normalize_magnitudes(mags, cfg.epsilon_floor),
                members: idx,
            })
        })
        .collect::<Result<_>>()?;
    let feature_reads = clusters.iter().map(|c| c.members.len()).sum();
    Ok(SamplingPlan {
        context_id,
        total_size: clusters.iter().map(|c| c.size).sum(),
        clusters,
        feature_reads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub cluster_id: usize,
    /// Index in the cloud dataset; unknown on the device side.
    pub cloud_index: Option<usize>,
}

/// Cloud samples sent to a device for one context, with importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedBatch {
    pub context_id: u32,
    pub samples: Vec<LabeledSample>,
    pub importance_weights: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl EnrichedBatch {
    pub fn empty(context_id: u32) -> Self {
        EnrichedBatch {
            context_id,
            samples: Vec::new(),
            importance_weights: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `Σ u_i φ(x_i)`.
    pub fn weighted_feature_sum(&self) -> Vec<f64> {
        let dim = self.samples.first().map_or(0, |s| s.feature.dim());
        let mut acc = vec![0.0; dim];
        for (s, u) in self.samples.iter().zip(&self.importance_weights) {
            linalg::axpy(&mut acc, *u, s.feature.as_slice());
        }
        acc
    }
}

/// Per-cluster generator seed; independent of evaluation order.
pub fn cluster_seed(seed: u64, cluster_id: usize) -> u64 {
    seed ^ cluster_id as u64
}

/// Draws every cluster's `|S_c|` members from its probability vector and
/// attaches importance weights.
pub fn draw_samples(
    plan: &SamplingPlan,
    cloud: &Dataset,
    seed: u64,
    replacement: Replacement,
) -> Result<EnrichedBatch> {
    let per_cluster: Vec<Vec<(usize, usize, f64)>> = plan
        .clusters
        .par_iter()
        .map(|cp| {
            if cp.size == 0 {
                return Ok(Vec::new());
            }
            if cp.probs.len() != cp.members.len() {
                return Err(DeltaError::DimensionMismatch {
                    expected: cp.members.len(),
                    got: cp.probs.len(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cluster_seed(seed, cp.cluster_id));
            let picks: Vec<usize> = match replacement {
                Replacement::With => {
                    let dist = WeightedIndex::new(&cp.probs)
                        .map_err(|e| DeltaError::config(format!("cluster {}: {e}", cp.cluster_id)))?;
                    (0..cp.size).map(|_| dist.sample(&mut rng)).collect()
                }
                Replacement::Without => {
                    if cp.size > cp.members.len() {
                        return Err(DeltaError::InsufficientMembers {
                            cluster: cp.cluster_id,
                            members: cp.members.len(),
                            requested: cp.size,
                        });
                    }
                    rand::seq::index::sample_weighted(&mut rng, cp.members.len(), |i| cp.probs[i], cp.size)
                        .map_err(|e| DeltaError::config(format!("cluster {}: {e}", cp.cluster_id)))?
                        .into_vec()
                }
            };
            picks
                .into_iter()
                .map(|j| {
                    let u = importance_weight(cp.weight, cp.size, cp.members.len(), cp.probs[j])?;
                    Ok((cp.cluster_id, cp.members[j], u))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut batch = EnrichedBatch::empty(plan.context_id);
    for (cluster_id, idx, u) in per_cluster.into_iter().flatten() {
        let sample = cloud
            .samples
            .get(idx)
            .ok_or_else(|| DeltaError::config(format!("plan references cloud index {idx} out of range")))?;
        batch.samples.push(sample.clone());
        batch.importance_weights.push(u);
        batch.provenance.push(Provenance {
            cluster_id,
            cloud_index: Some(idx),
        });
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directory::DirectoryEntry;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn dir_with(dispersions: &[f64], members: &[usize]) -> Directory {
        Directory {
            entries: dispersions
                .iter()
                .zip(members)
                .enumerate()
                .map(|(i, (&d, &m))| DirectoryEntry {
                    cluster_id: i,
                    label: 0,
                    medoid_feature: fv(&[0.0]),
                    dispersion: d,
                    member_count: m,
                })
                .collect(),
            feature_dim: 1,
            class_count: 1,
        }
    }

    #[test]
    fn allocation_examples() {
        let cfg = SamplingConfig::default();
        let d = dir_with(&[1.0, 1.0], &[10, 10]);
        assert_eq!(allocate_sizes(&[0.5, 0.5], &d, 10, &cfg).unwrap(), vec![5, 5]);
        assert_eq!(
            allocate_sizes(&[2.0 / 3.0, 1.0 / 3.0], &d, 9, &cfg).unwrap(),
            vec![6, 3]
        );
        let d = dir_with(&[2.0, 1.0], &[10, 10]);
        assert_eq!(allocate_sizes(&[0.5, 0.5], &d, 9, &cfg).unwrap(), vec![6, 3]);
    }

    #[test]
    fn allocation_edge_cases() {
        let cfg = SamplingConfig::default();
        let d = dir_with(&[1.0, 0.0, 1.0], &[3, 3, 3]);
        assert!(matches!(
            allocate_sizes(&[0.0, 0.0, 0.0], &d, 4, &cfg),
            Err(DeltaError::NoMatchedClusters)
        ));
        // zero weight never receives samples, zero dispersion falls back to the floor
        let s = allocate_sizes(&[0.0, 1.0, 0.0], &d, 4, &cfg).unwrap();
        assert_eq!(s, vec![0, 4, 0]);
        let without = SamplingConfig {
            replacement: Replacement::Without,
            ..cfg.clone()
        };
        let s = allocate_sizes(&[0.9, 0.0, 0.1], &d, 5, &without).unwrap();
        assert_eq!(s, vec![3, 0, 2]);
        assert!(allocate_sizes(&[0.9, 0.0, 0.1], &d, 7, &without).is_err());
        assert!(allocate_sizes(&[0.5, 0.5], &d, 4, &cfg).is_err());
    }

    #[test]
    fn largest_remainder_conserves_total() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 3), vec![0, 0]);
        assert_eq!(largest_remainder(&[0.1, 0.0, 0.2], 0), vec![0, 0, 0]);
        assert_eq!(largest_remainder(&[1e-300, 1.0], 2).iter().sum::<usize>(), 2);
    }

    #[test]
    fn intra_probs_examples() {
        let m = fv(&[0.0]);
        assert_eq!(intra_cluster_probs(&[fv(&[3.0])], &m, 1e-12).unwrap(), vec![1.0]);
        let same = intra_cluster_probs(&[m.clone(), m.clone(), m.clone()], &m, 1e-12).unwrap();
        assert!(same.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let p = intra_cluster_probs(&[fv(&[1.0]), fv(&[-1.0]), fv(&[2.0])], &m, 1e-12).unwrap();
        for (a, b) in p.iter().zip([0.25, 0.25, 0.5]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(intra_cluster_probs(&[], &m, 1e-12).is_err());
    }

    #[test]
    fn reoptimized_probs_examples() {
        let medoid = fv(&[0.0, 0.0]);
        let members = vec![fv(&[1.0, 2.0]), fv(&[3.0, -1.0]), fv(&[0.5, 0.5])];
        let past = PastContextSummary {
            mean_past_feature: fv(&[4.0, 4.0]),
        };
        for form in [PastForm::RootSumSquares, PastForm::Additive] {
            let a0 = reoptimized_probs(&members, &medoid, &past, 0.0, form, 1e-12).unwrap();
            let plain = intra_cluster_probs(&members, &medoid, 1e-12).unwrap();
            for (a, b) in a0.iter().zip(&plain) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        // (d_c, d_past) = (3, 4) for both members
        let medoid = fv(&[0.0, 0.0]);
        let past = PastContextSummary {
            mean_past_feature: fv(&[3.0, 4.0]),
        };
        let pair = vec![fv(&[3.0, 0.0]), fv(&[3.0, 0.0])];
        let p = reoptimized_probs(&pair, &medoid, &past, 1.0, PastForm::RootSumSquares, 1e-12).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        // magnitudes 5 and 0: the floor is the only mass on the second member
        let past = PastContextSummary {
            mean_past_feature: fv(&[0.0, 0.0]),
        };
        let members = vec![fv(&[3.0, 4.0]), fv(&[0.0, 0.0])];
        let medoid = fv(&[0.0, 0.0]);
        let p = reoptimized_probs(&members, &medoid, &past, 1.0, PastForm::RootSumSquares, 1e-12).unwrap();
        let mag = (25.0f64 + 25.0).sqrt();
        let floor = 1e-12 * (1.0 + mag / 2.0);
        assert!((p[1] - floor / (mag + 2.0 * floor)).abs() < 1e-20);
        assert!(p[1] > 0.0 && p[0] < 1.0);
    }

    #[test]
    fn importance_weight_formula() {
        assert!((importance_weight(1.0, 4, 10, 0.1).unwrap() - 0.25).abs() < 1e-15);
        let a = importance_weight(0.3, 2, 5, 0.2).unwrap();
        let b = importance_weight(0.3, 2, 5, 0.4).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15);
        assert!(importance_weight(1.0, 1, 1, 0.0).is_err());
        assert!(importance_weight(1.0, 1, 1, -0.5).is_err());
    }

    #[test]
    fn past_summary_averages_weighted_means() {
        let mut d = dir_with(&[1.0, 1.0], &[1, 1]);
        d.entries[0].medoid_feature = fv(&[2.0]);
        d.entries[1].medoid_feature = fv(&[4.0]);
        assert!(PastContextSummary::from_weight_history(&[], &d).unwrap().is_none());
        let s = PastContextSummary::from_weight_history(&[vec![1.0, 0.0], vec![0.5, 0.5]], &d)
            .unwrap()
            .unwrap();
        assert!((s.mean_past_feature.as_slice()[0] - 2.5).abs() < 1e-12);
    }
}
