//! End-to-end continual learning over a scenario with one of three
//! enrichment methods.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{EnrichedBatch, Provenance, SamplingConfig};
use crate::data::{Dataset, LabeledSample};
use crate::device::MatchConfig;
use crate::directory::{build_directory, DEFAULT_CLUSTERS_PER_LABEL};
use crate::error::{DeltaError, Result};
use crate::harness::metrics::{AccuracyHistory, Checkpoint, MetricsReport};
use crate::harness::scenario::{Scenario, ScenarioConfig};
use crate::model::{evaluate, train_with_checkpoints, LinearClassifier, TrainConfig};
use crate::protocol::{
    distribute_directory, run_enrichment_session, CloudServer, DeviceClient, Direction, Transcript,
    DEFAULT_UPLOAD_MIN_WEIGHT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full directory / matching / optimal-sampling protocol.
    Delta,
    /// Uniform cloud samples of the context's classes, same budget.
    Random,
    /// Device data only.
    Vanilla,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Delta, Method::Random, Method::Vanilla];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Delta => "delta",
            Method::Random => "random",
            Method::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = DeltaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(Method::Delta),
            "random" => Ok(Method::Random),
            "vanilla" => Ok(Method::Vanilla),
            other => Err(DeltaError::config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMode {
    PerContext,
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub clusters_per_label: usize,
    pub directory_seed: u64,
    pub matching: MatchConfig,
    pub sampling: SamplingConfig,
    pub upload_min_weight: f64,
    pub checkpoints: CheckpointMode,
    pub device_id: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            clusters_per_label: DEFAULT_CLUSTERS_PER_LABEL,
            directory_seed: 0,
            matching: MatchConfig::default(),
            sampling: SamplingConfig::default(),
            upload_min_weight: DEFAULT_UPLOAD_MIN_WEIGHT,
            checkpoints: CheckpointMode::PerContext,
            device_id: "device-0".into(),
        }
    }
}

impl RunConfig {
    /// Replaces every seed with values derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.directory_seed = seed ^ 0xD1EC;
        self.sampling.seed = seed ^ 0x5A3F;
        self
    }
}

/// Everything a run needs besides the method: the scenario and the run
/// configuration, stored as `[scenario]` and `[run]` TOML tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn benchmark(seed: u64) -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::benchmark(seed),
            run: RunConfig::default().with_seed(seed),
        }
    }

    /// Points every seed, scenario included, at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self.run = self.run.with_seed(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.run.train.validate()?;
        self.run.matching.validate()?;
        if self.run.clusters_per_label == 0 {
            return Err(DeltaError::config("clusters_per_label must be at least 1"));
        }
        let s = &self.run.sampling;
        if s.alpha.is_nan() || s.alpha < 0.0 || s.epsilon_floor.is_nan() || s.epsilon_floor <= 0.0 {
            return Err(DeltaError::config(
                "alpha must be non-negative and epsilon_floor positive",
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| DeltaError::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    pub metrics: MetricsReport,
    pub history: AccuracyHistory,
    pub transcript: Transcript,
    pub enriched: Vec<EnrichedBatch>,
}

/// Per-class uniform draws from the cloud pool: `per_class` samples of every
/// label in `classes`, without replacement when the pool allows it.
pub fn random_enrichment(
    context_id: u32,
    cloud: &Dataset,
    classes: &[usize],
    per_class: usize,
    seed: u64,
) -> EnrichedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = EnrichedBatch::empty(context_id);
    for &label in classes {
        let pool: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.samples[i].label == label).collect();
        if pool.is_empty() {
            continue;
        }
        let picks: Vec<usize> = if per_class <= pool.len() {
            let mut p = pool.clone();
            p.shuffle(&mut rng);
            p.truncate(per_class);
            p
        } else {
            (0..per_class)
                .map(|_| *pool.choose(&mut rng).expect("non-empty"))
                .collect()
        };
        for i in picks {
            batch.samples.push(cloud.samples[i].clone());
            batch.importance_weights.push(1.0);
            batch.provenance.push(Provenance {
                cluster_id: usize::MAX,
                cloud_index: Some(i),
            });
        }
    }
    batch
}

/// Replay set for context `t`: all device data so far with unit weight, and
/// every retained enriched batch with its importance weights scaled to a
/// mean of one per batch.
pub fn replay_set(device: &[Dataset], enriched: &[EnrichedBatch], t: usize) -> (Dataset, Vec<f64>) {
    let mut samples: Vec<LabeledSample> = Vec::new();
    let mut weights = Vec::new();
    for d in &device[..=t] {
        samples.extend(d.samples.iter().cloned());
        weights.extend(std::iter::repeat_n(1.0, d.len()));
    }
    for b in enriched {
        if b.is_empty() {
            continue;
        }
        let mean = b.importance_weights.iter().sum::<f64>() / b.len() as f64;
        samples.extend(b.samples.iter().cloned());
        weights.extend(b.importance_weights.iter().map(|u| u / mean));
    }
    (Dataset::new(format!("replay/{}", t + 1), samples), weights)
}

/// Runs the whole context sequence: enrich, train on the replay set,
/// evaluate on every test set seen so far.
pub fn run_continual_learning(scenario: &Scenario, method: Method, cfg: &RunConfig) -> Result<RunOutput> {
    let t_count = scenario.device.len();
    let classes = scenario.config.class_count;
    let dim = scenario.config.feature_dim;
    let mut transcript = Transcript::default();

    let mut session = match method {
        Method::Delta if cfg.sampling.budget_per_class > 0 => {
            let (directory, assignment) = build_directory(&scenario.cloud, cfg.clusters_per_label, cfg.directory_seed)?;
            let cloud = CloudServer::new(scenario.cloud.clone(), directory, assignment, cfg.sampling.clone());
            let mut device = DeviceClient::new(cfg.device_id.clone(), cfg.matching.clone());
            device.upload_min_weight = cfg.upload_min_weight;
            distribute_directory(&mut device, &cloud, &mut transcript)?;
            Some((device, cloud))
        }
        _ => None,
    };

    let mut model = LinearClassifier::zeros(classes, dim);
    let mut enriched: Vec<EnrichedBatch> = Vec::new();
    let mut history = AccuracyHistory::new(t_count);

    for t in 0..t_count {
        let context_id = t as u32 + 1;
        let batch = match (&mut session, method) {
            (Some((device, cloud)), Method::Delta) => {
                device.begin_context(scenario.device[t].clone());
                run_enrichment_session(device, &model, cloud, &mut transcript)?
            }
            (None, Method::Random) if cfg.sampling.budget_per_class > 0 => random_enrichment(
                context_id,
                &scenario.cloud,
                &scenario.device[t].labels(),
                cfg.sampling.budget_per_class,
                cfg.sampling.seed ^ (context_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ),
            _ => EnrichedBatch::empty(context_id),
        };
        enriched.push(batch);

        let (replay, weights) = replay_set(&scenario.device, &enriched, t);
        let train_cfg = TrainConfig {
            seed: cfg.train.seed.wrapping_add(context_id as u64),
            ..cfg.train.clone()
        };
        let mut per_epoch: Vec<(usize, Vec<f64>)> = Vec::new();
        let seen = &scenario.test[..=t];
        model = train_with_checkpoints(&model, &replay, Some(&weights), &train_cfg, |epoch, m| {
            if cfg.checkpoints == CheckpointMode::PerEpoch {
                let accs = seen.iter().map(|d| evaluate(m, d).unwrap_or(0.0)).collect();
                per_epoch.push((epoch, accs));
            }
        })?;
        match cfg.checkpoints {
            CheckpointMode::PerEpoch if !per_epoch.is_empty() => {
                for (epoch, accs) in per_epoch {
                    history.push_checkpoint(
                        Checkpoint {
                            context: t,
                            epoch: Some(epoch),
                        },
                        &accs,
                    );
                }
            }
            _ => {
                let accs = seen.iter().map(|d| evaluate(&model, d)).collect::<Result<Vec<_>>>()?;
                history.push_checkpoint(
                    Checkpoint {
                        context: t,
                        epoch: None,
                    },
                    &accs,
                );
            }
        }
    }

    let metrics = MetricsReport::from_history(
        &history,
        transcript.bytes_in(Direction::Upload),
        transcript.bytes_in(Direction::Download),
    )?;
    Ok(RunOutput {
        method,
        metrics,
        history,
        transcript,
        enriched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("fedavg".parse::<Method>().is_err());
    }

    #[test]
    fn experiment_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::benchmark(4);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial = text.split("[run").next().unwrap().to_string();
        let parsed = ExperimentConfig::from_toml(&partial).unwrap();
        assert_eq!(parsed.run, RunConfig::default());
    }

    #[test]
    fn replay_weights_average_one_per_batch() {
        let d = Dataset::new("d", vec![LabeledSample::new(crate::data::FeatureVector::zeros(1), 0)]);
        let mut b = EnrichedBatch::empty(1);
        for u in [0.1, 0.3] {
            b.samples
                .push(LabeledSample::new(crate::data::FeatureVector::zeros(1), 0));
            b.importance_weights.push(u);
            b.provenance.push(Provenance {
                cluster_id: 0,
                cloud_index: None,
            });
        }
        let (set, w) = replay_set(&[d], &[b], 0);
        assert_eq!(set.len(), 3);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.5).abs() < 1e-12 && (w[2] - 1.5).abs() < 1e-12);
    }
}
