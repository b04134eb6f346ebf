//! Brute-force references for small instances: the best sampling plan over
//! every integer allocation and a probability grid, and the subset-level
//! decomposition bound on dataset similarity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{allocate_sizes, intra_cluster_probs, SamplingConfig};
use crate::data::{Dataset, FeatureVector, LabeledSample};
use crate::directory::{cluster_dispersion, select_medoid, ClusterAssignment, Directory, DirectoryEntry};
use crate::error::{DeltaError, Result};
use crate::linalg;
use crate::model::{neighbourhood, per_sample_gradient, LinearClassifier, TrainConfig};

pub const ORACLE_MAX_BUDGET: usize = 8;
pub const ORACLE_MAX_MEMBERS: usize = 6;
pub const ORACLE_MAX_CLUSTERS: usize = 8;
/// Simplex grid resolution, as a number of equal parts.
pub const GRID_PARTS: usize = 20;
pub const DECOMPOSITION_MAX_CLOUD: usize = 10;
pub const DECOMPOSITION_MAX_BUDGET: usize = 6;
pub const DECOMPOSITION_MAX_ENTRIES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_value: f64,
    pub analytical_value: f64,
    /// `analytical_value - best_value`. Can be slightly negative: the grid
    /// cannot represent the continuous optimum the analytical plan uses.
    pub gap: f64,
    /// Gap over the best value; zero when both are zero.
    pub relative_gap: f64,
    pub best_sizes: Vec<usize>,
    pub analytical_sizes: Vec<usize>,
    pub best_probs: Vec<Vec<f64>>,
}

/// All vectors of `n` non-negative integers summing to `total`, in
/// lexicographic order.
pub fn compositions(total: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(total: usize, n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            rec(total - first, n - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(total, n, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// Points of the probability simplex in dimension `n` with coordinates on
/// multiples of `1 / parts`.
pub fn simplex_grid(n: usize, parts: usize) -> Vec<Vec<f64>> {
    compositions(parts, n)
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / parts as f64).collect())
        .collect()
}

/// Second moment about the medoid of one cluster's reweighted draw,
/// `Σ_i d_i² / (N² p_i)`; infinite when a member with `d_i > 0` has `p_i = 0`.
fn cluster_moment(dist: &[f64], probs: &[f64]) -> f64 {
    let n = dist.len() as f64;
    let mut total = 0.0;
    for (d, p) in dist.iter().zip(probs) {
        if *d == 0.0 {
            continue;
        }
        if *p <= 0.0 {
            return f64::INFINITY;
        }
        total += d * d / (n * n * p);
    }
    total
}

/// Expected squared deviation of the reweighted batch mean from the
/// weighted medoid mean, for sizes `s_c` and per-cluster probabilities:
/// `Σ_c (w_c² / s_c) Σ_i d_i² / (N_c² p_i)`.
pub fn plan_objective(weights: &[f64], dists: &[Vec<f64>], sizes: &[usize], probs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for c in 0..weights.len() {
        if weights[c] <= 0.0 {
            continue;
        }
        let m = cluster_moment(&dists[c], &probs[c]);
        if m == 0.0 {
            continue;
        }
        if sizes[c] == 0 {
            return f64::INFINITY;
        }
        total += weights[c] * weights[c] / sizes[c] as f64 * m;
    }
    total
}

/// Enumerates every allocation of `budget` over the matched clusters and,
/// per cluster, every probability vector on the simplex grid; reports the
/// best value next to the analytical plan's.
pub fn oracle_optimal_plan(
    weights: &[f64],
    directory: &Directory,
    assignment: &ClusterAssignment,
    cloud: &Dataset,
    budget: usize,
    cfg: &SamplingConfig,
) -> Result<OracleResult> {
    if weights.len() != directory.len() {
        return Err(DeltaError::DimensionMismatch {
            expected: directory.len(),
            got: weights.len(),
        });
    }
    if assignment.cluster_of.len() != cloud.len() {
        return Err(DeltaError::DimensionMismatch {
            expected: cloud.len(),
            got: assignment.cluster_of.len(),
        });
    }
    if budget == 0 || budget > ORACLE_MAX_BUDGET {
        return Err(DeltaError::InstanceTooLarge(format!(
            "budget {budget} outside 1..={ORACLE_MAX_BUDGET}"
        )));
    }
    let matched: Vec<usize> = (0..weights.len()).filter(|&c| weights[c] > 0.0).collect();
    if matched.is_empty() {
        return Err(DeltaError::NoMatchedClusters);
    }
    if matched.len() > ORACLE_MAX_CLUSTERS {
        return Err(DeltaError::InstanceTooLarge(format!(
            "{} matched clusters (max {ORACLE_MAX_CLUSTERS})",
            matched.len()
        )));
    }
    let members = assignment.members();
    let mut dists = vec![Vec::new(); weights.len()];
    for &c in &matched {
        let idx = &members[c];
        if idx.is_empty() {
            return Err(DeltaError::Empty("cluster"));
        }
        if idx.len() > ORACLE_MAX_MEMBERS {
            return Err(DeltaError::InstanceTooLarge(format!(
                "cluster {c} has {} members (max {ORACLE_MAX_MEMBERS})",
                idx.len()
            )));
        }
        let medoid = directory.entries[c].medoid_feature.as_slice();
        dists[c] = idx
            .iter()
            .map(|&i| linalg::distance(cloud.samples[i].feature.as_slice(), medoid))
            .collect();
    }

    // The objective separates: the best probability vector of a cluster
    // does not depend on its size.
    let mut best_probs = vec![Vec::new(); weights.len()];
    let mut best_moment = vec![0.0; weights.len()];
    for &c in &matched {
        let mut best = f64::INFINITY;
        for p in simplex_grid(dists[c].len(), GRID_PARTS) {
            let m = cluster_moment(&dists[c], &p);
            if m < best || best_probs[c].is_empty() {
                best = m;
                best_probs[c] = p;
            }
        }
        best_moment[c] = best;
    }

    let mut best_value = f64::INFINITY;
    let mut best_sizes = vec![0; weights.len()];
    for alloc in compositions(budget, matched.len()) {
        let mut sizes = vec![0; weights.len()];
        for (&c, &s) in matched.iter().zip(&alloc) {
            sizes[c] = s;
        }
        let mut value = 0.0;
        for &c in &matched {
            if best_moment[c] == 0.0 {
                continue;
            }
            if sizes[c] == 0 {
                value = f64::INFINITY;
                break;
            }
            value += weights[c] * weights[c] / sizes[c] as f64 * best_moment[c];
        }
        if value < best_value {
            best_value = value;
            best_sizes = sizes;
        }
    }

    let analytical_sizes = allocate_sizes(weights, directory, budget, cfg)?;
    let mut analytical_probs = vec![Vec::new(); weights.len()];
    for &c in &matched {
        let feats: Vec<FeatureVector> = members[c].iter().map(|&i| cloud.samples[i].feature.clone()).collect();
        analytical_probs[c] = intra_cluster_probs(&feats, &directory.entries[c].medoid_feature, cfg.epsilon_floor)?;
    }
    let analytical_value = plan_objective(weights, &dists, &analytical_sizes, &analytical_probs);

    let gap = if analytical_value == best_value {
        0.0
    } else {
        analytical_value - best_value
    };
    let relative_gap = if best_value > 0.0 {
        gap / best_value
    } else if gap <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(OracleResult {
        best_value,
        analytical_value,
        gap,
        relative_gap,
        best_sizes,
        analytical_sizes,
        best_probs,
    })
}

/// A small sampling instance: the cloud, its directory and assignment, the
/// directory weights and a budget.
#[derive(Debug, Clone)]
pub struct SmallInstance {
    pub cloud: Dataset,
    pub directory: Directory,
    pub assignment: ClusterAssignment,
    pub weights: Vec<f64>,
    pub budget: usize,
}

/// Builds a directory whose clusters are given explicitly.
pub fn directory_from_clusters(
    cloud: &Dataset,
    cluster_of: &[usize],
    class_count: usize,
) -> Result<(Directory, ClusterAssignment)> {
    let dim = cloud.validate(Some(class_count))?;
    let k = cluster_of.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (i, &c) in cluster_of.iter().enumerate() {
        members[c].push(i);
    }
    let mut entries = Vec::with_capacity(k);
    let mut centers = Vec::with_capacity(k);
    for (c, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            return Err(DeltaError::Empty("cluster"));
        }
        let label = cloud.samples[idx[0]].label;
        if idx.iter().any(|&i| cloud.samples[i].label != label) {
            return Err(DeltaError::config(format!("cluster {c} mixes labels")));
        }
        let feats: Vec<FeatureVector> = idx.iter().map(|&i| cloud.samples[i].feature.clone()).collect();
        let center = FeatureVector::new(linalg::mean_of(feats.iter().map(|f| f.as_slice()), dim))?;
        let medoid = feats[select_medoid(&feats, &center)?].clone();
        entries.push(DirectoryEntry {
            cluster_id: c,
            label,
            dispersion: cluster_dispersion(&feats, &medoid)?,
            medoid_feature: medoid,
            member_count: idx.len(),
        });
        centers.push(center);
    }
    let directory = Directory {
        entries,
        feature_dim: dim,
        class_count,
    };
    directory.validate()?;
    Ok((
        directory,
        ClusterAssignment {
            cluster_of: cluster_of.to_vec(),
            centers,
        },
    ))
}

/// Random instance with 1–4 clusters of 2–6 members in 2–3 dimensions,
/// weights drawn from [0.5, 1.5] and normalized, and a budget of at least
/// two draws per cluster (at most 8).
pub fn random_small_instance(seed: u64) -> SmallInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=4usize);
    let dim = rng.random_range(2..=3usize);
    let mut samples = Vec::new();
    let mut cluster_of = Vec::new();
    for c in 0..k {
        let n = rng.random_range(2..=ORACLE_MAX_MEMBERS);
        let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let spread = rng.random_range(0.5..2.0);
        for _ in 0..n {
            let f: Vec<f64> = centre
                .iter()
                .map(|m| m + spread * rng.random_range(-1.0..1.0))
                .collect();
            samples.push(LabeledSample::new(FeatureVector::new(f).expect("finite"), c % 2));
            cluster_of.push(c);
        }
    }
    let cloud = Dataset::new(format!("small/{seed}"), samples);
    let (directory, assignment) = directory_from_clusters(&cloud, &cluster_of, 2).expect("well-formed instance");
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let budget = rng.random_range((2 * k).min(ORACLE_MAX_BUDGET)..=ORACLE_MAX_BUDGET);
    SmallInstance {
        cloud,
        directory,
        assignment,
        weights,
        budget,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    /// Best similarity between the device data and any enumerated subset.
    pub lhs: f64,
    /// Best directory-weighted similarity plus the best subset similarity
    /// to that weighting.
    pub rhs: f64,
    pub best_weights: Vec<f64>,
    pub best_subset: Vec<usize>,
    pub holds: bool,
}

pub const DECOMPOSITION_TOLERANCE: f64 = 1e-6;

fn subsets_up_to(n: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << n) {
        if (mask.count_ones() as usize) <= max_size {
            out.push((0..n).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    linalg::mean_of(rows.iter().copied(), rows[0].len())
}

/// Compares the best achievable subset similarity with the two-step
/// decomposition through a weighted directory. Similarities use the
/// neighbourhood defined by `cfg`.
pub fn check_decomposition_bound(
    device: &Dataset,
    cloud: &Dataset,
    directory: &Directory,
    model: &LinearClassifier,
    cfg: &TrainConfig,
    budget: usize,
) -> Result<DecompositionCheck> {
    if device.is_empty() || cloud.is_empty() || directory.is_empty() {
        return Err(DeltaError::Empty("decomposition instance"));
    }
    if cloud.len() > DECOMPOSITION_MAX_CLOUD || budget == 0 || budget > DECOMPOSITION_MAX_BUDGET {
        return Err(DeltaError::InstanceTooLarge(format!(
            "cloud {} (max {DECOMPOSITION_MAX_CLOUD}), budget {budget} (1..={DECOMPOSITION_MAX_BUDGET})",
            cloud.len()
        )));
    }
    if directory.len() > DECOMPOSITION_MAX_ENTRIES {
        return Err(DeltaError::InstanceTooLarge(format!(
            "{} directory entries (max {DECOMPOSITION_MAX_ENTRIES})",
            directory.len()
        )));
    }
    let thetas = neighbourhood(model, cfg);
    // per θ: device mean gradient, per-cloud-sample and per-entry gradients
    let mut dev_g = Vec::new();
    let mut cloud_g = Vec::new();
    let mut entry_g = Vec::new();
    for theta in &thetas {
        let g: Vec<Vec<f64>> = device
            .samples
            .iter()
            .map(|s| per_sample_gradient(theta, s).map(|g| g.0))
            .collect::<Result<_>>()?;
        dev_g.push(mean_rows(&g.iter().map(|v| v.as_slice()).collect::<Vec<_>>()));
        cloud_g.push(
            cloud
                .samples
                .iter()
                .map(|s| per_sample_gradient(theta, s).map(|g| g.0))
                .collect::<Result<Vec<_>>>()?,
        );
        entry_g.push(
            directory
                .entries
                .iter()
                .map(|e| {
                    per_sample_gradient(theta, &LabeledSample::new(e.medoid_feature.clone(), e.label)).map(|g| g.0)
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let subsets = subsets_up_to(cloud.len(), budget);
    let subset_g: Vec<Vec<Vec<f64>>> = subsets
        .iter()
        .map(|s| {
            (0..thetas.len())
                .map(|t| mean_rows(&s.iter().map(|&i| cloud_g[t][i].as_slice()).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let sim = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        -a.iter().zip(b).map(|(x, y)| linalg::distance(x, y)).fold(0.0, f64::max)
    };

    let mut lhs = f64::NEG_INFINITY;
    for g in &subset_g {
        lhs = lhs.max(sim(&dev_g, g));
    }

    let mut best_w = Vec::new();
    let mut best_w_g = Vec::new();
    let mut best_dir = f64::NEG_INFINITY;
    for w in simplex_grid(directory.len(), GRID_PARTS) {
        let wg: Vec<Vec<f64>> = (0..thetas.len())
            .map(|t| {
                let mut acc = vec![0.0; model.param_count()];
                for (e, &we) in w.iter().enumerate() {
                    linalg::axpy(&mut acc, we, &entry_g[t][e]);
                }
                acc
            })
            .collect();
        let s = sim(&dev_g, &wg);
        if s > best_dir {
            best_dir = s;
            best_w = w;
            best_w_g = wg;
        }
    }
    let mut best_sub = f64::NEG_INFINITY;
    let mut best_subset = Vec::new();
    for (s, g) in subsets.iter().zip(&subset_g) {
        let v = sim(g, &best_w_g);
        if v > best_sub {
            best_sub = v;
            best_subset = s.clone();
        }
    }
    let rhs = best_dir + best_sub;
    Ok(DecompositionCheck {
        lhs,
        rhs,
        best_weights: best_w,
        best_subset,
        holds: lhs >= rhs - DECOMPOSITION_TOLERANCE,
    })
}

/// Tiny instance for the decomposition bound: a two-label cloud of at most
/// ten samples, three device samples, a small random head and a budget of
/// at most six.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub device: Dataset,
    pub cloud: Dataset,
    pub directory: Directory,
    pub model: LinearClassifier,
    pub budget: usize,
}

pub fn random_tiny_instance(seed: u64) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 2;
    let n = rng.random_range(4..=DECOMPOSITION_MAX_CLOUD);
    let draw = |rng: &mut ChaCha8Rng, label: usize| {
        let shift = if label == 0 { -1.0 } else { 1.0 };
        let f: Vec<f64> = (0..dim).map(|_| shift + rng.random_range(-1.5..1.5)).collect();
        LabeledSample::new(FeatureVector::new(f).expect("finite"), label)
    };
    let mut samples: Vec<LabeledSample> = (0..n).map(|i| draw(&mut rng, i % 2)).collect();
    samples.sort_by_key(|s| s.label);
    let cloud = Dataset::new(format!("tiny-cloud/{seed}"), samples);
    let device = Dataset::new(
        format!("tiny-device/{seed}"),
        (0..3).map(|i| draw(&mut rng, i % 2)).collect(),
    );
    // two clusters per label split by the first coordinate
    let mut cluster_of = vec![0; n];
    for label in 0..2 {
        let mut idx: Vec<usize> = (0..n).filter(|&i| cloud.samples[i].label == label).collect();
        idx.sort_by(|&a, &b| cloud.samples[a].feature.as_slice()[0].total_cmp(&cloud.samples[b].feature.as_slice()[0]));
        let half = idx.len().div_ceil(2);
        for (r, &i) in idx.iter().enumerate() {
            cluster_of[i] = 2 * label + usize::from(r >= half && idx.len() > 1);
        }
    }
    // compact ids in case a label produced a single cluster
    let mut used: Vec<usize> = cluster_of.clone();
    used.sort_unstable();
    used.dedup();
    for c in cluster_of.iter_mut() {
        *c = used.binary_search(c).expect("present");
    }
    let (directory, _) = directory_from_clusters(&cloud, &cluster_of, 2).expect("well-formed instance");
    let model = LinearClassifier::random(2, dim, 0.5, seed ^ 0x7A);
    let budget = rng.random_range(1..=4usize);
    TinyInstance {
        device,
        cloud,
        directory,
        model,
        budget,
    }
}
