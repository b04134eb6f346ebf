//! Empirical checks of the sampling scheme's guarantees: Monte Carlo
//! estimator moments, Lipschitz / smoothness probes, the similarity bound
//! for sampled batches, and the terms of the loss-reduction bound.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::{build_plan, draw_samples, importance_weight, PastContextSummary, SamplingConfig, SamplingPlan};
use crate::data::{Dataset, FeatureVector, LabeledSample};
use crate::device::{compute_context_weights, MatchConfig};
use crate::directory::{ClusterAssignment, Directory};
use crate::error::{DeltaError, Result};
use crate::harness::scenario::{ContextSpec, Scenario, ScenarioConfig};
use crate::linalg;
use crate::model::{dataset_gradient, per_sample_gradient, weighted_similarity, LinearClassifier, TrainConfig};

/// Moments of `Σ_{x∈S_c} u(x)·φ(x)` over repeated draws of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub draws: usize,
    pub mean: Vec<f64>,
    /// Per-coordinate standard error of `mean`.
    pub standard_error: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl EstimatorStats {
    /// Whether every coordinate of `mean` lies within `k` standard errors of
    /// `target`.
    pub fn within(&self, target: &[f64], k: f64) -> bool {
        self.mean
            .iter()
            .zip(&self.standard_error)
            .zip(target)
            .all(|((m, se), t)| (m - t).abs() <= k * se + 1e-12 * (1.0 + t.abs()))
    }
}

pub fn uniform_probs(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Draws `size` members i.i.d. from `probs` `draws` times and records the
/// importance-reweighted feature sum of each draw.
pub fn cluster_estimator_stats(
    members: &[FeatureVector],
    probs: &[f64],
    weight: f64,
    size: usize,
    draws: usize,
    seed: u64,
) -> Result<EstimatorStats> {
    if members.is_empty() {
        return Err(DeltaError::Empty("cluster"));
    }
    if probs.len() != members.len() {
        return Err(DeltaError::DimensionMismatch {
            expected: members.len(),
            got: probs.len(),
        });
    }
    if draws < 2 || size == 0 {
        return Err(DeltaError::config("need at least two draws of a non-empty sample"));
    }
    let dim = members[0].dim();
    let dist = WeightedIndex::new(probs).map_err(|e| DeltaError::config(e.to_string()))?;
    let u: Vec<f64> = probs
        .iter()
        .map(|&p| importance_weight(weight, size, members.len(), p))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut est = vec![0.0; dim];
    for _ in 0..draws {
        est.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..size {
            let j = dist.sample(&mut rng);
            linalg::axpy(&mut est, u[j], members[j].as_slice());
        }
        for k in 0..dim {
            sum[k] += est[k];
            sq[k] += est[k] * est[k];
        }
    }
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q - n * m * m) / (n - 1.0)).max(0.0))
        .collect();
    Ok(EstimatorStats {
        draws,
        standard_error: var.iter().map(|v| (v / n).sqrt()).collect(),
        total_variance: var.iter().sum(),
        mean,
    })
}

/// Moments of `w·φ(x̄_c) + Σ u(x)·(φ(x) − φ(x̄_c))`, the importance estimate
/// of `w ×` cluster mean anchored at the medoid. Unlike the raw sum its
/// variance does not depend on where the origin lies, and distance-to-medoid
/// probabilities minimise it.
pub fn medoid_anchored_stats(
    members: &[FeatureVector],
    medoid: &FeatureVector,
    probs: &[f64],
    weight: f64,
    size: usize,
    draws: usize,
    seed: u64,
) -> Result<EstimatorStats> {
    let centred: Vec<FeatureVector> = members
        .iter()
        .map(|f| {
            if f.dim() != medoid.dim() {
                return Err(DeltaError::DimensionMismatch {
                    expected: medoid.dim(),
                    got: f.dim(),
                });
            }
            FeatureVector::new(f.as_slice().iter().zip(medoid.as_slice()).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    let mut stats = cluster_estimator_stats(&centred, probs, weight, size, draws, seed)?;
    linalg::axpy(&mut stats.mean, weight, medoid.as_slice());
    Ok(stats)
}

/// Empirical constants of the model and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsEstimate {
    /// Largest observed `‖g(x) − g(x')‖ / ‖φ(x) − φ(x')‖` over same-label
    /// pairs and small feature perturbations.
    pub lipschitz: f64,
    /// Largest observed `‖∇L(θ') − ∇L(θ)‖ / ‖θ' − θ‖` over parameter probes.
    pub smoothness: f64,
    /// `‖φ(D^t) − φ(D^{1:t−1})‖²` per context; zero for the first.
    pub heterogeneity: Vec<f64>,
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let len = linalg::norm(&v);
        if len > 0.0 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// Max gradient-difference to feature-difference ratio. Half the probes
/// pair two same-label samples, the rest perturb one sample's features.
pub fn estimate_lipschitz(model: &LinearClassifier, data: &Dataset, probes: usize, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(DeltaError::Empty("dataset"));
    }
    data.validate(Some(model.classes()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for k in 0..probes {
        let a = &data.samples[rng.random_range(0..data.len())];
        let b = if k % 2 == 0 {
            let same: Vec<&LabeledSample> = data.samples.iter().filter(|s| s.label == a.label).collect();
            same[rng.random_range(0..same.len())].clone()
        } else {
            let scale = 0.1 * (1.0 + linalg::norm(a.feature.as_slice())) * rng.random_range(0.01..1.0);
            let dir = random_direction(&mut rng, model.dim());
            let f: Vec<f64> = a
                .feature
                .as_slice()
                .iter()
                .zip(&dir)
                .map(|(x, d)| x + scale * d)
                .collect();
            LabeledSample::new(FeatureVector::new(f)?, a.label)
        };
        let df = linalg::distance(a.feature.as_slice(), b.feature.as_slice());
        if df == 0.0 {
            continue;
        }
        let dg = per_sample_gradient(model, a)?.distance(&per_sample_gradient(model, &b)?);
        best = best.max(dg / df);
    }
    Ok(best)
}

/// Max ratio of full-dataset gradient change to parameter change over
/// random parameter perturbations around `model`.
pub fn estimate_smoothness(model: &LinearClassifier, data: &Dataset, probes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = dataset_gradient(model, data, None)?;
    let theta = model.params();
    let mut best: f64 = 0.0;
    for _ in 0..probes {
        let r = rng.random_range(1e-3..1.0);
        let dir = random_direction(&mut rng, theta.len());
        let p: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + r * d).collect();
        let moved = LinearClassifier::from_params(model.classes(), model.dim(), &p)?;
        let g = dataset_gradient(&moved, data, None)?;
        best = best.max(g.distance(&base) / r);
    }
    Ok(best)
}

/// `‖φ(D^t) − φ(D^{1:t−1})‖²` for every context, pooling past samples.
pub fn heterogeneity(device: &[Dataset]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(device.len());
    for t in 0..device.len() {
        if t == 0 {
            out.push(0.0);
            continue;
        }
        let current = device[t].mean_feature()?;
        let past = pooled_mean(&device[..t])?;
        out.push(linalg::squared_distance(current.as_slice(), past.as_slice()));
    }
    Ok(out)
}

fn pooled_mean(sets: &[Dataset]) -> Result<FeatureVector> {
    let dim = sets
        .iter()
        .find_map(|d| d.dim())
        .ok_or(DeltaError::Empty("device history"))?;
    FeatureVector::new(linalg::mean_of(
        sets.iter().flat_map(|d| d.samples.iter().map(|s| s.feature.as_slice())),
        dim,
    ))
}

pub fn estimate_diagnostics(
    scenario: &Scenario,
    model: &LinearClassifier,
    probes: usize,
    seed: u64,
) -> Result<DiagnosticsEstimate> {
    let all = scenario
        .device
        .iter()
        .fold(Dataset::new("device/all", Vec::new()), |acc, d| {
            acc.concat(d, "device/all")
        });
    Ok(DiagnosticsEstimate {
        lipschitz: estimate_lipschitz(model, &all, probes, seed)?,
        smoothness: estimate_smoothness(model, &all, probes, seed ^ 1)?,
        heterogeneity: heterogeneity(&scenario.device)?,
    })
}

/// The weighted directory as a dataset of medoids with their weights;
/// zero-weight entries are dropped.
pub fn weighted_directory_dataset(directory: &Directory, weights: &[f64]) -> (Dataset, Vec<f64>) {
    let mut samples = Vec::new();
    let mut w = Vec::new();
    for (e, &we) in directory.entries.iter().zip(weights) {
        if we > 0.0 {
            samples.push(LabeledSample::new(e.medoid_feature.clone(), e.label));
            w.push(we);
        }
    }
    (Dataset::new("directory/weighted", samples), w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    /// Monte Carlo mean of the batch-to-directory similarity.
    pub mean_similarity: f64,
    /// Monte Carlo mean of `‖φ̄(S) − Σ w_c φ(x̄_c)‖`, with `φ̄(S)` the
    /// importance-weighted batch mean.
    pub mean_deviation: f64,
    pub lipschitz: f64,
    /// Standard error of `similarity + L·deviation`.
    pub standard_error: f64,
    pub holds: bool,
}

/// Checks `E[Sim(S, wD)] ≥ −L·E‖φ̄(S) − φ(wD)‖` up to three standard errors
/// over `draws` batches drawn from `plan`.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem2_bound(
    weights: &[f64],
    plan: &SamplingPlan,
    directory: &Directory,
    cloud: &Dataset,
    model: &LinearClassifier,
    lipschitz: f64,
    draws: usize,
    seed: u64,
) -> Result<Theorem2Report> {
    if draws < 2 {
        return Err(DeltaError::config("need at least two draws"));
    }
    let (dir_set, dir_w) = weighted_directory_dataset(directory, weights);
    if dir_set.is_empty() {
        return Err(DeltaError::NoMatchedClusters);
    }
    let target = directory.weighted_mean(weights)?;
    let total_w: f64 = dir_w.iter().sum();
    let target: Vec<f64> = target.as_slice().iter().map(|v| v / total_w).collect();
    let cfg = TrainConfig::default();
    let mut sims = Vec::with_capacity(draws);
    let mut devs = Vec::with_capacity(draws);
    for k in 0..draws {
        let batch = draw_samples(
            plan,
            cloud,
            seed.wrapping_add(k as u64),
            crate::cloud::Replacement::With,
        )?;
        let set = Dataset::new("batch", batch.samples.clone());
        let sim = weighted_similarity(
            &set,
            Some(&batch.importance_weights),
            &dir_set,
            Some(&dir_w),
            model,
            &cfg,
        )?;
        let mass: f64 = batch.importance_weights.iter().sum();
        let mean: Vec<f64> = batch.weighted_feature_sum().iter().map(|v| v / mass).collect();
        sims.push(sim);
        devs.push(linalg::distance(&mean, &target));
    }
    let n = draws as f64;
    let vals: Vec<f64> = sims.iter().zip(&devs).map(|(s, d)| s + lipschitz * d).collect();
    let mean_v = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean_v).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(Theorem2Report {
        mean_similarity: sims.iter().sum::<f64>() / n,
        mean_deviation: devs.iter().sum::<f64>() / n,
        lipschitz,
        standard_error: se,
        holds: mean_v >= -3.0 * se - 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Terms {
    pub alpha: f64,
    /// Total variance (covariance trace) of `Σ u(x)(φ(x) − φ(D^t))` over
    /// draws.
    pub new_context_term: f64,
    /// Total variance of `Σ u(x)(φ(x) − φ(D^{1:t−1}))` over draws.
    pub past_context_term: f64,
    /// Mean drop of the loss on `D^{1:t}` after one gradient step on the
    /// device data plus the drawn batch.
    pub loss_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Report {
    /// 1-based context index.
    pub context: usize,
    pub heterogeneity: f64,
    pub variants: Vec<Theorem3Terms>,
    /// Whether the first variant with `α > 0` has a smaller past-context
    /// term than the first with `α = 0`; `None` unless both are present.
    pub alpha_reduces_past_term: Option<bool>,
}

/// Running per-coordinate sums for a covariance trace.
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            n: 0,
            sum: vec![0.0; dim],
            sq: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for (k, v) in x.iter().enumerate() {
            self.sum[k] += v;
            self.sq[k] += v * v;
        }
    }

    fn total_variance(&self) -> f64 {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(&self.sq)
            .map(|(s, q)| ((q - s * s / n) / (n - 1.0)).max(0.0))
            .sum()
    }
}

/// Shared cloud-side state for [`check_theorem3_terms`].
#[derive(Debug, Clone, Copy)]
pub struct CloudView<'a> {
    pub cloud: &'a Dataset,
    pub directory: &'a Directory,
    pub assignment: &'a ClusterAssignment,
}

/// Monte Carlo estimate of the loss-reduction bound's terms at context `t`
/// (1-based, `t ≥ 2`) for each sampling variant. All variants use the same
/// draw seeds.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem3_terms(
    device: &[Dataset],
    t: usize,
    view: CloudView<'_>,
    model: &LinearClassifier,
    matching: &MatchConfig,
    variants: &[SamplingConfig],
    draws: usize,
    learning_rate: f64,
) -> Result<Theorem3Report> {
    if t < 2 || t > device.len() {
        return Err(DeltaError::config(format!(
            "context {t} needs 2 <= t <= {}",
            device.len()
        )));
    }
    if draws < 2 {
        return Err(DeltaError::config("need at least two draws"));
    }
    let current_mean = device[t - 1].mean_feature()?;
    let past_mean = pooled_mean(&device[..t - 1])?;
    let het = linalg::squared_distance(current_mean.as_slice(), past_mean.as_slice());

    let weights: Vec<Vec<f64>> = (0..t)
        .map(|i| {
            compute_context_weights(i as u32 + 1, &device[i], view.directory, model, matching).map(|w| w.normalized())
        })
        .collect::<Result<_>>()?;
    let summary = PastContextSummary::from_weight_history(&weights[..t - 1], view.directory)?;
    let seen = device[..t]
        .iter()
        .fold(Dataset::new("seen", Vec::new()), |acc, d| acc.concat(d, "seen"));
    let loss_before = model.dataset_loss(&seen, None)?;

    let mut out = Vec::with_capacity(variants.len());
    for cfg in variants {
        let plan = build_plan(
            t as u32,
            &weights[t - 1],
            view.directory,
            view.assignment,
            view.cloud,
            summary.as_ref(),
            cfg,
        )?;
        let dim = current_mean.dim();
        let mut new_moments = Moments::new(dim);
        let mut past_moments = Moments::new(dim);
        let mut reduction = 0.0;
        for k in 0..draws {
            let batch = draw_samples(&plan, view.cloud, cfg.seed.wrapping_add(k as u64), cfg.replacement)?;
            let mut dn = vec![0.0; current_mean.dim()];
            let mut dp = vec![0.0; current_mean.dim()];
            for (s, &u) in batch.samples.iter().zip(&batch.importance_weights) {
                for (j, &x) in s.feature.as_slice().iter().enumerate() {
                    dn[j] += u * (x - current_mean.as_slice()[j]);
                    dp[j] += u * (x - past_mean.as_slice()[j]);
                }
            }
            new_moments.push(&dn);
            past_moments.push(&dp);

            let (replay, w) = crate::harness::runner::replay_set(&device[..t], std::slice::from_ref(&batch), t - 1);
            let g = dataset_gradient(model, &replay, Some(&w))?;
            let stepped: Vec<f64> = model
                .params()
                .iter()
                .zip(&g.0)
                .map(|(p, g)| p - learning_rate * g)
                .collect();
            let next = LinearClassifier::from_params(model.classes(), model.dim(), &stepped)?;
            reduction += loss_before - next.dataset_loss(&seen, None)?;
        }
        let n = draws as f64;
        out.push(Theorem3Terms {
            alpha: cfg.alpha,
            new_context_term: new_moments.total_variance(),
            past_context_term: past_moments.total_variance(),
            loss_reduction: reduction / n,
        });
    }
    let with_alpha = out.iter().find(|v| v.alpha > 0.0);
    let without = out.iter().find(|v| v.alpha == 0.0);
    let alpha_reduces_past_term = match (with_alpha, without) {
        (Some(a), Some(b)) => Some(a.past_context_term < b.past_context_term),
        _ => None,
    };
    Ok(Theorem3Report {
        context: t,
        heterogeneity: het,
        variants: out,
        alpha_reduces_past_term,
    })
}

/// Two contexts over the same two classes whose class means move far apart
/// between contexts, so the cloud holds well-separated past and current
/// data under every label.
pub fn shifted_past_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        class_count: 2,
        context_count: 2,
        feature_dim: 8,
        raw_dim: None,
        class_spread: 1.0,
        cloud_samples_per_class: 60,
        device_samples_per_class: 5,
        test_samples_per_class: 20,
        seed,
        contexts: (0..2)
            .map(|_| ContextSpec {
                classes: vec![0, 1],
                mean_shift: 6.0,
                cov_scale: 1.0,
            })
            .collect(),
        cloud_only_contexts: Vec::new(),
    }
}
