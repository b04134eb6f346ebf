//! Synthetic scenarios, the continual-learning loop, metrics, baselines,
//! brute-force oracles and empirical checks of the sampling guarantees.

pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod scenario;
pub mod theory;

pub use metrics::{metric_overall, metric_plasticity, metric_stability, AccuracyHistory, Checkpoint, MetricsReport};
pub use oracle::{check_decomposition_bound, oracle_optimal_plan, DecompositionCheck, OracleResult};
pub use runner::{run_continual_learning, CheckpointMode, ExperimentConfig, Method, RunConfig, RunOutput};
pub use scenario::{generate_scenario, ContextSpec, Scenario, ScenarioConfig};
pub use theory::{check_theorem2_bound, check_theorem3_terms, DiagnosticsEstimate};
