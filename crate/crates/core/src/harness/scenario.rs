//! Synthetic multi-context scenarios: class-conditional Gaussian embeddings
//! whose means move from context to context.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, LabeledSample, RandomProjection};
use crate::error::{DeltaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub classes: Vec<usize>,
    /// Length of the offset applied to every class prototype in this
    /// context. One random direction is drawn per context and shared by its
    /// classes.
    pub mean_shift: f64,
    /// Per-coordinate standard deviation around the shifted mean.
    pub cov_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub class_count: usize,
    pub context_count: usize,
    pub feature_dim: usize,
    /// When set, samples are drawn in this raw dimension and mapped to
    /// `feature_dim` by a seeded random projection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_dim: Option<usize>,
    /// Standard deviation of class prototype coordinates.
    pub class_spread: f64,
    pub cloud_samples_per_class: usize,
    pub device_samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub seed: u64,
    pub contexts: Vec<ContextSpec>,
    /// Contexts of other users: they contribute `cloud_samples_per_class`
    /// samples per class to the cloud pool and nothing to the device.
    #[serde(default)]
    pub cloud_only_contexts: Vec<ContextSpec>,
}

pub const DEFAULT_DEVICE_SAMPLES_PER_CLASS: usize = 5;

impl ScenarioConfig {
    /// Default desk-scale benchmark: ten classes over five contexts in 32
    /// dimensions. Each context holds four classes and moves all of them
    /// along one random direction; every class recurs in two contexts. The
    /// cloud pool additionally holds twelve contexts of other users that
    /// the device never sees, so most same-class cloud data is off-context.
    pub fn benchmark(seed: u64) -> Self {
        let class_count = 10;
        let spec = |classes: Vec<usize>| ContextSpec {
            classes,
            mean_shift: 10.0,
            cov_scale: 1.0,
        };
        ScenarioConfig {
            class_count,
            context_count: 5,
            feature_dim: 32,
            raw_dim: None,
            class_spread: 0.4,
            cloud_samples_per_class: 50,
            device_samples_per_class: DEFAULT_DEVICE_SAMPLES_PER_CLASS,
            test_samples_per_class: 100,
            seed,
            contexts: (0..5)
                .map(|t| spec((0..4).map(|j| (2 * t + j) % class_count).collect()))
                .collect(),
            cloud_only_contexts: (0..12).map(|_| spec((0..class_count).collect())).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.feature_dim == 0 {
            return Err(DeltaError::config("class_count and feature_dim must be positive"));
        }
        if self.contexts.len() != self.context_count || self.context_count == 0 {
            return Err(DeltaError::config(format!(
                "context_count is {} but {} contexts are described",
                self.context_count,
                self.contexts.len()
            )));
        }
        if self.device_samples_per_class == 0 || self.test_samples_per_class == 0 {
            return Err(DeltaError::config("device and test samples per class must be positive"));
        }
        if self.raw_dim == Some(0) {
            return Err(DeltaError::config("raw_dim must be positive"));
        }
        for (t, c) in self.contexts.iter().chain(&self.cloud_only_contexts).enumerate() {
            if c.classes.is_empty() {
                return Err(DeltaError::config(format!("context {} has no classes", t + 1)));
            }
            if let Some(&bad) = c.classes.iter().find(|&&k| k >= self.class_count) {
                return Err(DeltaError::LabelOutOfRange {
                    label: bad,
                    classes: self.class_count,
                });
            }
            if !(c.cov_scale >= 0.0 && c.cov_scale.is_finite() && c.mean_shift.is_finite()) {
                return Err(DeltaError::config(format!(
                    "context {} needs a finite shift and non-negative scale",
                    t + 1
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| DeltaError::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Shuffled union over contexts; context identity is not recorded.
    pub cloud: Dataset,
    pub device: Vec<Dataset>,
    pub test: Vec<Dataset>,
    /// Per context, the feature-space mean of each of its classes.
    pub class_means: Vec<Vec<(usize, FeatureVector)>>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Random unit direction (zero in the degenerate case).
fn direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let dir = gaussian(rng, dim, 1.0);
    let len = crate::linalg::norm(&dir);
    dir.into_iter().map(|d| if len > 0.0 { d / len } else { 0.0 }).collect()
}

fn shifted_mean(prototype: &[f64], dir: &[f64], shift: f64) -> Vec<f64> {
    prototype.iter().zip(dir).map(|(p, d)| p + shift * d).collect()
}

/// Draws cloud, device and test data for every context. Deterministic in
/// `config.seed`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let space = config.raw_dim.unwrap_or(config.feature_dim);
    let projection = config
        .raw_dim
        .map(|r| RandomProjection::new(r, config.feature_dim, config.seed ^ 0x5052_4f4a));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes: Vec<Vec<f64>> = (0..config.class_count)
        .map(|_| gaussian(&mut rng, space, config.class_spread))
        .collect();

    let embed = |raw: Vec<f64>| -> Result<FeatureVector> {
        match &projection {
            Some(p) => p.extract(&raw),
            None => FeatureVector::new(raw),
        }
    };

    let mut cloud = Vec::new();
    let mut device = Vec::new();
    let mut test = Vec::new();
    let mut class_means = Vec::new();
    for (t, ctx) in config.contexts.iter().enumerate() {
        let mut dev = Vec::new();
        let mut tst = Vec::new();
        let mut means = Vec::new();
        let dir = direction(&mut rng, space);
        for &c in &ctx.classes {
            let mean = shifted_mean(&prototypes[c], &dir, ctx.mean_shift);
            means.push((c, embed(mean.clone())?));
            let mut draw = |n: usize, out: &mut Vec<LabeledSample>| -> Result<()> {
                for _ in 0..n {
                    let noise = gaussian(&mut rng, space, ctx.cov_scale);
                    let raw = mean.iter().zip(noise).map(|(m, z)| m + z).collect();
                    out.push(LabeledSample::new(embed(raw)?, c));
                }
                Ok(())
            };
            draw(config.cloud_samples_per_class, &mut cloud)?;
            draw(config.device_samples_per_class, &mut dev)?;
            draw(config.test_samples_per_class, &mut tst)?;
        }
        device.push(Dataset::new(format!("device/{}", t + 1), dev));
        test.push(Dataset::new(format!("test/{}", t + 1), tst));
        class_means.push(means);
    }
    for ctx in &config.cloud_only_contexts {
        let dir = direction(&mut rng, space);
        for &c in &ctx.classes {
            let mean = shifted_mean(&prototypes[c], &dir, ctx.mean_shift);
            for _ in 0..config.cloud_samples_per_class {
                let noise = gaussian(&mut rng, space, ctx.cov_scale);
                let raw = mean.iter().zip(noise).map(|(m, z)| m + z).collect();
                cloud.push(LabeledSample::new(embed(raw)?, c));
            }
        }
    }
    cloud.shuffle(&mut rng);
    Ok(Scenario {
        config: config.clone(),
        cloud: Dataset::new("cloud", cloud),
        device,
        test,
        class_means,
    })
}
