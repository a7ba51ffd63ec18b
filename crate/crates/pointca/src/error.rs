//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by point-cloud, metric, model, attack, and IO operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A cloud is too small for the requested neighborhood operation.
    #[error("cloud has {size} points, operation requires more than {needed}")]
    TooFewPoints { size: usize, needed: usize },

    /// A scalar or structural parameter is outside its legal range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Two per-point sequences that must align do not.
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    /// A point-set distance was asked for an empty cloud.
    #[error("point cloud is empty")]
    EmptyCloud,

    /// The exact assignment solver refuses clouds past its size bound.
    #[error("{size} points exceeds the {limit}-point bound of the exact solver")]
    TooLargeForExact { size: usize, limit: usize },

    /// A normalized error metric has a zero denominator.
    #[error("normalization denominator is zero")]
    ZeroDenominator,

    /// An aggregate was asked for an empty sequence.
    #[error("empty input sequence")]
    EmptyInput,

    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Backward was called on a non-scalar tensor.
    #[error("backward target is not a scalar")]
    NotScalar,

    /// Backward was called twice on the same tape.
    #[error("tape already consumed by a backward pass")]
    StaleTape,

    /// An attack or evaluation was run against an untrained model.
    #[error("model is untrained: {0}")]
    ModelUntrained(String),

    /// An attack or command configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A training set or campaign input has no entries.
    #[error("dataset is empty")]
    EmptyDataset,

    /// Underlying filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A weight file has the wrong magic bytes or format version.
    #[error("weight file version mismatch: {0}")]
    VersionMismatch(String),

    /// A text file failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A defense filter rejected every point.
    #[error("defense removed every point")]
    AllPointsRemoved,

    /// Attack pairing needs at least two shape classes.
    #[error("dataset needs at least 2 classes, found {0}")]
    TooFewClasses(usize),

    /// A shape specification has parameters outside documented ranges.
    #[error("invalid shape spec: {0}")]
    InvalidSpec(String),

    /// A rendering viewpoint lies inside the unit ball.
    #[error("viewpoint must lie outside the unit ball")]
    InvalidViewpoint,
}

pub type Result<T> = std::result::Result<T, Error>;
