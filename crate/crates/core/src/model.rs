//! On-device linear classification head over frozen features, its closed-form
//! cross-entropy gradients, and the gradient-based dataset similarity.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::error::{DeltaError, Result};
use crate::linalg;

/// Softmax regression head: `logits = W φ + b` with `W` of shape `classes × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    classes: usize,
    dim: usize,
    /// Row-major `classes × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearClassifier {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    /// Gaussian initialisation with standard deviation `scale`.
    pub fn random(classes: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        };
        let weights = (0..classes * dim).map(|_| draw()).collect();
        let bias = (0..classes).map(|_| draw()).collect();
        LinearClassifier {
            classes,
            dim,
            weights,
            bias,
        }
    }

    pub fn from_parts(classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * dim {
            return Err(DeltaError::DimensionMismatch {
                expected: classes * dim,
                got: weights.len(),
            });
        }
        if bias.len() != classes {
            return Err(DeltaError::DimensionMismatch {
                expected: classes,
                got: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(DeltaError::NonFinite("classifier parameters"));
        }
        Ok(LinearClassifier {
            classes,
            dim,
            weights,
            bias,
        })
    }

    /// Rebuilds a classifier from a flat parameter vector laid out like
    /// [`GradientVector`]: weights row-major, then bias.
    pub fn from_params(classes: usize, dim: usize, params: &[f64]) -> Result<Self> {
        let n = classes * dim;
        if params.len() != n + classes {
            return Err(DeltaError::DimensionMismatch {
                expected: n + classes,
                got: params.len(),
            });
        }
        Self::from_parts(classes, dim, params[..n].to_vec(), params[n..].to_vec())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn param_count(&self) -> usize {
        self.classes * self.dim + self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn check_sample(&self, sample: &LabeledSample) -> Result<()> {
        if sample.feature.dim() != self.dim {
            return Err(DeltaError::DimensionMismatch {
                expected: self.dim,
                got: sample.feature.dim(),
            });
        }
        if sample.label >= self.classes {
            return Err(DeltaError::LabelOutOfRange {
                label: sample.label,
                classes: self.classes,
            });
        }
        Ok(())
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| linalg::dot(row, feature) + b)
            .collect()
    }

    pub fn predict(&self, feature: &[f64]) -> usize {
        linalg::argmax(&self.logits(feature)).unwrap_or(0)
    }

    /// Cross-entropy loss of one sample.
    pub fn sample_loss(&self, sample: &LabeledSample) -> Result<f64> {
        self.check_sample(sample)?;
        let logits = self.logits(sample.feature.as_slice());
        Ok(cross_entropy(&logits, sample.label))
    }

    /// Mean (optionally weighted) cross-entropy loss over a dataset.
    pub fn dataset_loss(&self, data: &Dataset, weights: Option<&[f64]>) -> Result<f64> {
        let weights = check_weights(data, weights)?;
        let mut total = 0.0;
        let mut mass = 0.0;
        for (i, s) in data.samples.iter().enumerate() {
            let u = weights.map_or(1.0, |w| w[i]);
            if u == 0.0 {
                continue;
            }
            total += u * self.sample_loss(s)?;
            mass += u;
        }
        Ok(total / mass)
    }

    /// Adds `scale · ∇ℓ(sample)` into `acc` (laid out as a [`GradientVector`])
    /// and returns the sample's loss.
    fn accumulate_gradient(&self, sample: &LabeledSample, scale: f64, acc: &mut [f64]) -> f64 {
        let phi = sample.feature.as_slice();
        let logits = self.logits(phi);
        let lse = log_sum_exp(&logits);
        let loss = cross_entropy(&logits, sample.label);
        let probs: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        // p_y − 1 as −Σ_{j≠y} p_j: no cancellation when p_y ≈ 1
        let label_residual = -probs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != sample.label)
            .map(|(_, p)| p)
            .sum::<f64>();
        let (w_part, b_part) = acc.split_at_mut(self.classes * self.dim);
        for (k, &p) in probs.iter().enumerate() {
            let r = if k == sample.label { label_residual } else { p };
            let coeff = scale * r;
            linalg::axpy(&mut w_part[k * self.dim..(k + 1) * self.dim], coeff, phi);
            b_part[k] += coeff;
        }
        loss
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log Σ exp(z) − z[label]`, written as `(m − z[label]) + ln_1p(rest)` so
/// confident predictions keep their full relative precision.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let top = linalg::argmax(logits).unwrap_or(label);
    let m = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, z)| (z - m).exp())
        .sum();
    (m - logits[label]) + rest.ln_1p()
}

fn check_weights<'a>(data: &Dataset, weights: Option<&'a [f64]>) -> Result<Option<&'a [f64]>> {
    if data.is_empty() {
        return Err(DeltaError::Empty("dataset"));
    }
    if let Some(w) = weights {
        if w.len() != data.len() {
            return Err(DeltaError::DimensionMismatch {
                expected: data.len(),
                got: w.len(),
            });
        }
        if w.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(DeltaError::config("sample weights must be finite and non-negative"));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(DeltaError::config("sample weights sum to zero"));
        }
    }
    Ok(weights)
}

/// Flattened loss gradient with the same layout as the classifier
/// parameters: `classes × dim` weight block, then `classes` bias entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.0)
    }

    pub fn distance(&self, other: &GradientVector) -> f64 {
        linalg::distance(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Radius of the parameter neighbourhood searched by [`similarity`].
    pub epsilon_ball: f64,
    /// Number of random neighbourhood points besides the centre.
    pub perturbation_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            epsilon_ball: 0.0,
            perturbation_count: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DeltaError::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(DeltaError::config("batch_size must be at least 1"));
        }
        if self.epsilon_ball.is_nan() || self.epsilon_ball < 0.0 {
            return Err(DeltaError::config("epsilon_ball must be non-negative"));
        }
        Ok(())
    }
}

/// Closed-form cross-entropy gradient of the head at one sample:
/// `(softmax(logits) - onehot(y)) ⊗ φ` for the weights and the residual itself
/// for the bias.
pub fn per_sample_gradient(model: &LinearClassifier, sample: &LabeledSample) -> Result<GradientVector> {
    model.check_sample(sample)?;
    let mut g = vec![0.0; model.param_count()];
    model.accumulate_gradient(sample, 1.0, &mut g);
    Ok(GradientVector(g))
}

/// Mean per-sample gradient, or `Σ uᵢ gᵢ / Σ uᵢ` when weights are given.
pub fn dataset_gradient(model: &LinearClassifier, data: &Dataset, weights: Option<&[f64]>) -> Result<GradientVector> {
    let weights = check_weights(data, weights)?;
    let mut g = vec![0.0; model.param_count()];
    let mut mass = 0.0;
    for (i, s) in data.samples.iter().enumerate() {
        model.check_sample(s)?;
        let u = weights.map_or(1.0, |w| w[i]);
        if u == 0.0 {
            continue;
        }
        model.accumulate_gradient(s, u, &mut g);
        mass += u;
    }
    g.iter_mut().for_each(|v| *v /= mass);
    Ok(GradientVector(g))
}

/// Parameter points searched by [`similarity`]: the centre, then
/// `perturbation_count` seeded points drawn uniformly from the ball of radius
/// `epsilon_ball`. Prefixes are stable, so a larger count is a superset.
pub fn neighbourhood(model: &LinearClassifier, cfg: &TrainConfig) -> Vec<LinearClassifier> {
    let mut out = vec![model.clone()];
    if cfg.perturbation_count == 0 || cfg.epsilon_ball == 0.0 {
        return out;
    }
    let centre = model.params();
    let n = centre.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.perturbation_count {
        let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let len = linalg::norm(&dir).max(f64::MIN_POSITIVE);
        let u: f64 = rand::Rng::random(&mut rng);
        let radius = cfg.epsilon_ball * u.powf(1.0 / n as f64);
        let params: Vec<f64> = centre.iter().zip(&dir).map(|(c, d)| c + radius * d / len).collect();
        out.push(LinearClassifier {
            classes: model.classes,
            dim: model.dim,
            bias: params[model.classes * model.dim..].to_vec(),
            weights: params[..model.classes * model.dim].to_vec(),
        });
    }
    out
}

/// Gradient-based dataset similarity: the negated largest distance between
/// the two datasets' mean gradients over the searched parameter neighbourhood.
/// Always `<= 0`; zero when both datasets induce the same mean gradient.
pub fn similarity(d1: &Dataset, d2: &Dataset, model: &LinearClassifier, cfg: &TrainConfig) -> Result<f64> {
    weighted_similarity(d1, None, d2, None, model, cfg)
}

/// [`similarity`] with optional per-sample weights on either side.
pub fn weighted_similarity(
    d1: &Dataset,
    w1: Option<&[f64]>,
    d2: &Dataset,
    w2: Option<&[f64]>,
    model: &LinearClassifier,
    cfg: &TrainConfig,
) -> Result<f64> {
    if d1.is_empty() || d2.is_empty() {
        return Err(DeltaError::Empty("dataset"));
    }
    let mut worst: f64 = 0.0;
    for theta in neighbourhood(model, cfg) {
        let g1 = dataset_gradient(&theta, d1, w1)?;
        let g2 = dataset_gradient(&theta, d2, w2)?;
        worst = worst.max(g1.distance(&g2));
    }
    Ok(-worst)
}

/// Mini-batch gradient descent on (weighted) cross-entropy.
pub fn train(
    model: &LinearClassifier,
    data: &Dataset,
    sample_weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<LinearClassifier> {
    train_with_checkpoints(model, data, sample_weights, cfg, |_, _| {})
}

/// [`train`] that calls `on_epoch(epoch, &model)` after every completed epoch.
pub fn train_with_checkpoints<F>(
    model: &LinearClassifier,
    data: &Dataset,
    sample_weights: Option<&[f64]>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<LinearClassifier>
where
    F: FnMut(usize, &LinearClassifier),
{
    cfg.validate()?;
    let weights = check_weights(data, sample_weights)?;
    for s in &data.samples {
        model.check_sample(s)?;
    }
    let mut current = model.clone();
    if cfg.epochs == 0 {
        return Ok(current);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; current.param_count()];
    let split = current.classes * current.dim;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut mass = 0.0;
            let mut loss = 0.0;
            for &i in batch {
                let u = weights.map_or(1.0, |w| w[i]);
                if u == 0.0 {
                    continue;
                }
                loss += u * current.accumulate_gradient(&data.samples[i], u, &mut grad);
                mass += u;
            }
            if mass == 0.0 {
                continue;
            }
            let loss = loss / mass;
            if !loss.is_finite() {
                return Err(DeltaError::Diverged { epoch, step, loss });
            }
            let scale = cfg.learning_rate / mass;
            linalg::axpy(&mut current.weights, -scale, &grad[..split]);
            linalg::axpy(&mut current.bias, -scale, &grad[split..]);
        }
        on_epoch(epoch, &current);
    }
    if current.weights.iter().chain(&current.bias).any(|v| !v.is_finite()) {
        return Err(DeltaError::Diverged {
            epoch: cfg.epochs - 1,
            step: data.len().div_ceil(cfg.batch_size) - 1,
            loss: f64::NAN,
        });
    }
    Ok(current)
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn evaluate(model: &LinearClassifier, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(DeltaError::Empty("dataset"));
    }
    let mut correct = 0usize;
    for s in &data.samples {
        model.check_sample(s)?;
        if model.predict(s.feature.as_slice()) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureVector;

    fn sample(v: &[f64], y: usize) -> LabeledSample {
        LabeledSample::new(FeatureVector::new(v.to_vec()).unwrap(), y)
    }

    #[test]
    fn confident_predictions_keep_relative_precision() {
        // reference values computed at 50 digits
        let m = LinearClassifier::from_parts(
            2,
            2,
            vec![
                -0.06372902097020602,
                -1.3416901897119424,
                3.266887990568141,
                -3.3690043695322913,
            ],
            vec![0.5914274364778143, 3.6722214746340156],
        )
        .unwrap();
        let s = LabeledSample::new(
            FeatureVector::new(vec![2.304085555473402, -1.3843359479836264]).unwrap(),
            1,
        );
        let loss = m.sample_loss(&s).unwrap();
        assert!((loss / 1.289436667335555e-06 - 1.0).abs() < 1e-12, "{loss:e}");
        let g = per_sample_gradient(&m, &s).unwrap();
        let want = [
            2.970970484466063e-06,
            -1.7850123804103587e-06,
            -2.970970484466063e-06,
            1.7850123804103587e-06,
            1.289435836012453e-06,
            -1.289435836012453e-06,
        ];
        for (a, b) in g.0.iter().zip(want) {
            assert!((a / b - 1.0).abs() < 1e-12, "{a:e} vs {b:e}");
        }
    }

    #[test]
    fn zero_model_gradient_matches_hand_evaluation() {
        let model = LinearClassifier::zeros(2, 2);
        let g = per_sample_gradient(&model, &sample(&[1.0, 0.0], 0)).unwrap();
        assert_eq!(g.0, vec![-0.5, 0.0, 0.5, 0.0, -0.5, 0.5]);
    }

    #[test]
    fn perfectly_fit_sample_has_zero_gradient() {
        // logits (800, 0): softmax is exactly onehot(0) in f64.
        let model = LinearClassifier::from_parts(2, 1, vec![800.0, 0.0], vec![0.0, 0.0]).unwrap();
        let g = per_sample_gradient(&model, &sample(&[1.0], 0)).unwrap();
        assert!(g.0.iter().all(|v| *v == 0.0), "{g:?}");
    }

    #[test]
    fn gradient_rejects_bad_shapes() {
        let model = LinearClassifier::zeros(2, 3);
        assert!(matches!(
            per_sample_gradient(&model, &sample(&[1.0], 0)),
            Err(DeltaError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            per_sample_gradient(&model, &sample(&[1.0, 2.0, 3.0], 2)),
            Err(DeltaError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn dataset_gradient_edge_cases() {
        let model = LinearClassifier::random(3, 2, 0.5, 1);
        let a = sample(&[0.3, -1.0], 1);
        let b = sample(&[2.0, 0.5], 2);
        let single = Dataset::new("s", vec![a.clone()]);
        assert_eq!(
            dataset_gradient(&model, &single, None).unwrap(),
            per_sample_gradient(&model, &a).unwrap()
        );
        let pair = Dataset::new("p", vec![a.clone(), b.clone()]);
        let dup = Dataset::new("d", vec![a.clone(), b.clone(), a.clone(), b]);
        let g1 = dataset_gradient(&model, &pair, None).unwrap();
        let g2 = dataset_gradient(&model, &dup, None).unwrap();
        for (x, y) in g1.0.iter().zip(&g2.0) {
            assert!((x - y).abs() < 1e-15);
        }
        let gw = dataset_gradient(&model, &pair, Some(&[2.0, 0.0])).unwrap();
        let ga = per_sample_gradient(&model, &a).unwrap();
        for (x, y) in gw.0.iter().zip(&ga.0) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(dataset_gradient(&model, &Dataset::new("e", vec![]), None).is_err());
        assert!(dataset_gradient(&model, &pair, Some(&[1.0])).is_err());
        assert!(dataset_gradient(&model, &pair, Some(&[-1.0, 1.0])).is_err());
    }

    #[test]
    fn similarity_of_identical_datasets_is_zero() {
        let model = LinearClassifier::random(3, 2, 0.5, 2);
        let d = Dataset::new("d", vec![sample(&[0.3, -1.0], 1), sample(&[1.0, 1.0], 0)]);
        let cfg = TrainConfig {
            epsilon_ball: 0.5,
            perturbation_count: 8,
            ..TrainConfig::default()
        };
        assert_eq!(similarity(&d, &d, &model, &cfg).unwrap(), 0.0);
        assert!(similarity(&d, &Dataset::new("e", vec![]), &model, &cfg).is_err());
    }

    #[test]
    fn neighbourhood_stays_in_ball_and_prefixes_are_stable() {
        let model = LinearClassifier::random(2, 3, 1.0, 3);
        let small = TrainConfig {
            epsilon_ball: 0.25,
            perturbation_count: 3,
            ..TrainConfig::default()
        };
        let big = TrainConfig {
            perturbation_count: 7,
            ..small.clone()
        };
        let a = neighbourhood(&model, &small);
        let b = neighbourhood(&model, &big);
        assert_eq!(a.len(), 4);
        assert_eq!(&b[..4], &a[..]);
        let centre = model.params();
        for m in &b {
            assert!(linalg::distance(&m.params(), &centre) <= 0.25 + 1e-12);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let model = LinearClassifier::random(2, 2, 0.1, 4);
        let d = Dataset::new("d", vec![sample(&[1.0, 0.0], 0)]);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&model, &d, None, &cfg).unwrap(), model);
    }

    #[test]
    fn divergence_is_reported() {
        let model = LinearClassifier::zeros(2, 1);
        let d = Dataset::new("d", vec![sample(&[1e200], 0), sample(&[-1e200], 1)]);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&model, &d, None, &cfg),
            Err(DeltaError::Diverged { .. })
        ));
    }

    #[test]
    fn evaluate_counts_argmax_hits() {
        let model = LinearClassifier::from_parts(2, 1, vec![1.0, -1.0], vec![0.0, 0.0]).unwrap();
        let right = Dataset::new("r", vec![sample(&[1.0], 0), sample(&[-1.0], 1)]);
        let wrong = Dataset::new("w", vec![sample(&[1.0], 1), sample(&[-1.0], 0)]);
        assert_eq!(evaluate(&model, &right).unwrap(), 1.0);
        assert_eq!(evaluate(&model, &wrong).unwrap(), 0.0);
        assert!(evaluate(&model, &Dataset::new("e", vec![])).is_err());
    }
}
