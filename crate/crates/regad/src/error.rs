use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RegadError>;

#[derive(Debug, Error)]
pub enum RegadError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },

    #[error("anomalous image {image} has no ground-truth mask (expected {expected})")]
    MissingMask { image: PathBuf, expected: PathBuf },

    #[error("empty category `{category}`: {detail}")]
    EmptyCategory { category: String, detail: String },

    #[error("category `{0}` not found")]
    UnknownCategory(String),

    #[error("dataset layout error: {0}")]
    Layout(String),

    #[error("need {needed} samples but only {available} are available")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("affine transform is not invertible (|det| = {det:e} below floor {floor:e})")]
    Singular { det: f64, floor: f64 },

    #[error("need at least two pooled features, got {0}")]
    TooFewFeatures(usize),

    #[error("covariance at position ({i}, {j}) is not positive definite")]
    NotPositiveDefinite { i: usize, j: usize },

    #[error("AUROC needs both classes (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error(
        "non-finite loss at epoch {epoch} step {step} (lr = {lr:e}); batch pairs: {batch}"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        lr: f64,
        batch: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl RegadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RegadError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-friendly class name, printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            RegadError::Io { .. } => "io",
            RegadError::UnreadableImage { .. } => "image",
            RegadError::MissingMask { .. }
            | RegadError::EmptyCategory { .. }
            | RegadError::UnknownCategory(_)
            | RegadError::Layout(_) => "dataset",
            RegadError::InsufficientSamples { .. } => "sampling",
            RegadError::InvalidInput(_) | RegadError::ShapeMismatch(_) => "input",
            RegadError::Singular { .. } => "affine",
            RegadError::TooFewFeatures(_) | RegadError::NotPositiveDefinite { .. } => "estimate",
            RegadError::SingleClass { .. } => "metric",
            RegadError::NonFiniteLoss { .. } => "train",
            RegadError::Checkpoint(_) => "checkpoint",
            RegadError::MetadataMismatch(_) => "metadata",
            RegadError::Archive(_) => "archive",
            RegadError::Config(_) => "config",
            RegadError::Tensor(_) => "tensor",
        }
    }
}
