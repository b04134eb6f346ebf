//! Cloud-assisted data enrichment for on-device continual learning.
//!
//! The cloud clusters its pool into a [`Directory`]; a device matches its
//! few local samples against the directory and uploads only the resulting
//! weights; the cloud answers with an importance-weighted batch drawn from
//! an analytically optimal sampling plan. See [`protocol`] for the wire
//! format and [`harness`] for the simulator.

pub mod cloud;
pub mod data;
pub mod device;
pub mod directory;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod protocol;

pub use cloud::{
    allocate_sizes, build_plan, draw_samples, importance_weight, intra_cluster_probs, reoptimized_probs, EnrichedBatch,
    PastContextSummary, SamplingConfig, SamplingPlan,
};
pub use data::{Dataset, FeatureVector, LabeledSample};
pub use device::{compute_context_weights, hard_match, soft_match, ContextWeights, MatchConfig, MatchMode};
pub use directory::{build_directory, kmeans_cluster, ClusterAssignment, Directory, DirectoryEntry};
pub use error::{DeltaError, Result};
pub use model::{dataset_gradient, per_sample_gradient, similarity, train, LinearClassifier, TrainConfig};
pub use protocol::{decode, encode, Message};
