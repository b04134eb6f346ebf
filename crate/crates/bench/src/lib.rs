//! Shared fixtures for the criterion benchmarks.

use delta_core::harness::{generate_scenario, ExperimentConfig, Scenario};
use delta_core::{
    build_directory, compute_context_weights, ClusterAssignment, Directory, LinearClassifier, MatchConfig,
};

/// The default benchmark scenario with its directory and the first
/// context's directory weights.
pub struct Fixture {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub directory: Directory,
    pub assignment: ClusterAssignment,
    pub model: LinearClassifier,
    pub weights: Vec<f64>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let config = ExperimentConfig::benchmark(seed);
        let scenario = generate_scenario(&config.scenario).expect("benchmark scenario");
        let (directory, assignment) =
            build_directory(&scenario.cloud, config.run.clusters_per_label, seed).expect("directory");
        let model = LinearClassifier::zeros(config.scenario.class_count, config.scenario.feature_dim);
        let weights = compute_context_weights(1, &scenario.device[0], &directory, &model, &MatchConfig::default())
            .expect("weights")
            .normalized();
        Fixture {
            config,
            scenario,
            directory,
            assignment,
            model,
            weights,
        }
    }
}
