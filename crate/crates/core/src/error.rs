use thiserror::Error;

pub type Result<T, E = DeltaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DeltaError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("cannot form {k} clusters from {points} points")]
    TooFewPoints { k: usize, points: usize },

    #[error("no directory entry matches label {label}")]
    NoMatchingEntry { label: usize },

    #[error("all allocation shares are zero")]
    NoMatchedClusters,

    #[error("cluster {cluster} has {members} members but {requested} draws without replacement were requested")]
    InsufficientMembers {
        cluster: usize,
        members: usize,
        requested: usize,
    },

    #[error("importance weight requires a positive probability, got {0}")]
    NonPositiveProbability(f64),

    #[error("instance too large for enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("incomplete accuracy history: {0}")]
    IncompleteHistory(String),

    #[error("decode error at byte {position}: {reason}")]
    Decode { position: usize, reason: String },

    #[error("protocol error ({code}): {detail}")]
    Protocol { code: String, detail: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DeltaError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DeltaError::InvalidConfig(msg.into())
    }

    /// Short machine-readable code carried by protocol error messages.
    pub fn code(&self) -> &'static str {
        match self {
            DeltaError::DimensionMismatch { .. } => "dimension_mismatch",
            DeltaError::Empty(_) => "empty",
            DeltaError::LabelOutOfRange { .. } => "label_out_of_range",
            DeltaError::NonFinite(_) => "non_finite",
            DeltaError::InvalidConfig(_) => "invalid_config",
            DeltaError::Diverged { .. } => "diverged",
            DeltaError::TooFewPoints { .. } => "too_few_points",
            DeltaError::NoMatchingEntry { .. } => "no_matching_entry",
            DeltaError::NoMatchedClusters => "no_matched_clusters",
            DeltaError::InsufficientMembers { .. } => "insufficient_members",
            DeltaError::NonPositiveProbability(_) => "non_positive_probability",
            DeltaError::InstanceTooLarge(_) => "instance_too_large",
            DeltaError::IncompleteHistory(_) => "incomplete_history",
            DeltaError::Decode { .. } => "decode",
            DeltaError::Protocol { .. } => "protocol",
            DeltaError::Parse { .. } => "parse",
            DeltaError::Io(_) => "io",
        }
    }
}
