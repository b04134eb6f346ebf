use delta_core::directory::{cluster_dispersion, kmeans_fit, select_medoid};
use delta_core::{build_directory, kmeans_cluster, Dataset, Directory, FeatureVector, LabeledSample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn fv(v: &[f64]) -> FeatureVector {
    FeatureVector::new(v.to_vec()).unwrap()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Sum of squared distances to the cluster means for a 2-way split.
fn split_cost(points: &[Vec<f64>], mask: u32) -> f64 {
    let mut cost = 0.0;
    for side in [0, 1] {
        let idx: Vec<usize> = (0..points.len()).filter(|&i| ((mask >> i) & 1) == side).collect();
        if idx.is_empty() {
            return f64::INFINITY;
        }
        let dim = points[0].len();
        let mean: Vec<f64> = (0..dim)
            .map(|k| idx.iter().map(|&i| points[i][k]).sum::<f64>() / idx.len() as f64)
            .collect();
        cost += idx.iter().map(|&i| sq(&points[i], &mean)).sum::<f64>();
    }
    cost
}

fn blobs(seed: u64, per_blob: usize, sigma: f64) -> (Vec<Vec<f64>>, Vec<usize>, [Vec<f64>; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let means = [vec![0.0, 0.0], vec![10.0 * sigma * 2f64.sqrt(), 0.0]];
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (b, m) in means.iter().enumerate() {
        for _ in 0..per_blob {
            pts.push(m.iter().map(|c| c + noise.sample(&mut rng)).collect());
            truth.push(b);
        }
    }
    (pts, truth, means)
}

#[test]
fn separated_blobs_match_the_exhaustive_optimum() {
    for seed in 0..10 {
        let (pts, truth, means) = blobs(seed, 6, 0.7);
        let best = (1..(1u32 << pts.len()) - 1)
            .min_by(|&a, &b| split_cost(&pts, a).total_cmp(&split_cost(&pts, b)))
            .unwrap();
        let feats: Vec<FeatureVector> = pts.iter().map(|p| fv(p)).collect();
        let a = kmeans_cluster(&feats, 2, seed, 100, 1e-6).unwrap();
        // same partition as the brute-force optimum and the ground truth
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let same_km = a.cluster_of[i] == a.cluster_of[j];
                let same_best = ((best >> i) & 1) == ((best >> j) & 1);
                assert_eq!(same_km, same_best, "seed {seed}");
                assert_eq!(same_km, truth[i] == truth[j], "seed {seed}");
            }
        }
        // each centre sits on its blob's sample mean, which is near the true one
        for (c, centre) in a.centers.iter().enumerate() {
            let blob = truth[a.cluster_of.iter().position(|&x| x == c).unwrap()];
            let idx: Vec<usize> = (0..pts.len()).filter(|&i| truth[i] == blob).collect();
            let mean: Vec<f64> = (0..2)
                .map(|k| idx.iter().map(|&i| pts[i][k]).sum::<f64>() / idx.len() as f64)
                .collect();
            assert!(sq(centre.as_slice(), &mean).sqrt() < 1e-9, "seed {seed}");
            assert!(sq(&mean, &means[blob]).sqrt() < 3.0 * 0.7, "seed {seed}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn lloyd_objective_never_increases(
        pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 4..40),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let feats: Vec<FeatureVector> = pts.iter().map(|p| fv(p)).collect();
        let fit = kmeans_fit(&feats, k.min(feats.len()), seed, 100, 1e-6).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", fit.objective_trace);
        }
        prop_assert_eq!(fit.assignment.cluster_of.len(), feats.len());
        prop_assert!(fit.assignment.members().iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn dispersion_matches_naive_recomputation(
        pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..30),
        c in prop::collection::vec(-10.0f64..10.0, 4),
    ) {
        let feats: Vec<FeatureVector> = pts.iter().map(|p| fv(p)).collect();
        let m = select_medoid(&feats, &fv(&c)).unwrap();
        // naive: the medoid is the first member at minimal distance
        let mut naive_m = 0;
        for i in 0..pts.len() {
            if sq(&pts[i], &c) < sq(&pts[naive_m], &c) {
                naive_m = i;
            }
        }
        prop_assert_eq!(m, naive_m);
        let mut total = 0.0;
        for p in &pts {
            let mut s = 0.0;
            for k in 0..4 {
                s += (p[k] - pts[m][k]) * (p[k] - pts[m][k]);
            }
            total += s.sqrt();
        }
        let d = cluster_dispersion(&feats, &feats[m]).unwrap();
        prop_assert!((d - total / pts.len() as f64).abs() < 1e-9);
    }
}

fn labelled_cloud(seed: u64, labels: usize, per_label: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for i in 0..labels * per_label {
        let label = i % labels;
        let f: Vec<f64> = (0..3)
            .map(|_| label as f64 * 4.0 + rng.random_range(-2.0..2.0))
            .collect();
        samples.push(LabeledSample::new(fv(&f), label));
    }
    Dataset::new("cloud", samples)
}

#[test]
fn directory_accounts_for_every_sample_and_keeps_labels_apart() {
    let cloud = labelled_cloud(3, 2, 50);
    let (dir, assign) = build_directory(&cloud, 5, 9).unwrap();
    assert_eq!(dir.len(), 10);
    assert_eq!(dir.entries.iter().map(|e| e.member_count).sum::<usize>(), 100);
    dir.validate().unwrap();
    for (i, &c) in assign.cluster_of.iter().enumerate() {
        assert_eq!(dir.entries[c].label, cloud.samples[i].label);
    }
    // entries are sorted by label and each medoid is a real member of its cluster
    assert!(dir.entries.windows(2).all(|w| w[0].label <= w[1].label));
    for e in &dir.entries {
        assert!(assign
            .cluster_of
            .iter()
            .enumerate()
            .any(|(i, &c)| c == e.cluster_id && cloud.samples[i].feature == e.medoid_feature));
    }
}

#[test]
fn directory_is_seeded_and_survives_jsonl() {
    let cloud = labelled_cloud(4, 3, 30);
    let (a, aa) = build_directory(&cloud, 20, 1).unwrap();
    let (b, ba) = build_directory(&cloud, 20, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(aa, ba);
    let mut buf = Vec::new();
    a.write_jsonl(&mut buf).unwrap();
    assert_eq!(Directory::read_jsonl(&buf[..], Some(3)).unwrap(), a);
}

#[test]
fn small_labels_get_fewer_clusters() {
    let mut cloud = labelled_cloud(5, 1, 40);
    cloud.samples.push(LabeledSample::new(fv(&[9.0, 9.0, 9.0]), 1));
    cloud.samples.push(LabeledSample::new(fv(&[9.5, 9.0, 9.0]), 1));
    let (dir, _) = build_directory(&cloud, 20, 0).unwrap();
    assert_eq!(dir.entries.iter().filter(|e| e.label == 0).count(), 20);
    assert_eq!(dir.entries.iter().filter(|e| e.label == 1).count(), 2);
}
