use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

/// Errors raised by tensor primitives and the tape.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {dim} is {found}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    EmptyDimension(Shape),
    #[error("buffer of {found} elements does not fit shape {shape:?}")]
    BufferSize { shape: Shape, found: usize },
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("pyramid level too small: size {size} cannot be pooled by kernel {kernel} at stride 2")]
    PyramidLevelTooSmall { size: usize, kernel: usize },
    #[error("upsampling factor must be at least 2, got {0}")]
    UpsampleFactor(usize),
    #[error("channel mask selects no channels")]
    EmptyMask,
    #[error("channel mask selects {found} channels, expected {expected}")]
    MaskCardinality { expected: usize, found: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Shape),
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

/// Errors raised when reading or validating genotype and arch-param files.
#[derive(Debug, Error)]
pub enum GenotypeError {
    #[error("unsupported genotype version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u64 },
    #[error("malformed genotype file: {0}")]
    Malformed(String),
    #[error("genotype violates invariant: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors raised while building or running networks.
#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("genotype does not match network config: {0}")]
    GenotypeMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by the search and retraining loops.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset split: {0}")]
    EmptySplit(&'static str),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by data generation, dataset IO and metrics.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty count range {0}..={1}")]
    EmptyCountRange(usize, usize),
    #[error("image size {0} must be a positive multiple of 8")]
    ImageSize(usize),
    #[error("dot ({x}, {y}) lies outside a {width}x{height} image")]
    DotOutOfBounds {
        x: f32,
        y: f32,
        width: usize,
        height: usize,
    },
    #[error("density radius must be positive, got {0}")]
    Radius(f32),
    #[error("metric inputs are empty")]
    EmptyMetrics,
    #[error("metric inputs disagree: {0}")]
    MetricMismatch(String),
    #[error("malformed dataset file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
