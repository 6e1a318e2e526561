//! Library error types.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("batch composition unsuitable for batch-hard mining: {0}")]
    Composition(String),
    #[error("label out of range: {0}")]
    Label(String),
}

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("shape mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("record {index}: invalid field `{field}`: {reason}")]
    Record {
        index: usize,
        field: String,
        reason: String,
    },
    #[error("manifest `{name}`: {reason}")]
    Manifest { name: String, reason: String },
    #[error("batch composition: {0}")]
    Composition(String),
    #[error("class-merge mapping: {0}")]
    Mapping(String),
    #[error("bounds: {0}")]
    Bounds(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite loss at step {step} on dataset `{dataset}` in `{loss}`")]
    NonFiniteLoss {
        step: usize,
        dataset: String,
        loss: String,
    },
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("run i/o: {0}")]
    Io(#[from] std::io::Error),
}
