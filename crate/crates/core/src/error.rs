//! Error types for every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match buffer length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for extent {extent}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a one-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape has already been consumed by backward")]
    TapeConsumed,
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{op}: needs at least one operand")]
    NoOperands { op: &'static str },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {timestamp} is not after the previous observation of station {station}")]
    OutOfOrder {
        line: u64,
        station: String,
        timestamp: String,
    },
    #[error("line {line}: timestamp {timestamp} is not on the {step_minutes}-minute grid")]
    Misaligned {
        line: u64,
        timestamp: String,
        step_minutes: i64,
    },
    #[error("line {line}: negative flow {value}")]
    NegativeFlow { line: u64, value: f64 },
    #[error("station {0:?} not found in input")]
    UnknownStation(String),
    #[error("column {0:?} not found in header")]
    UnknownColumn(String),
    #[error("series has no present values")]
    AllMissing,
    #[error("spline imputation needs at least {needed} present values, found {found}")]
    TooFewPresent { needed: usize, found: usize },
    #[error("series is empty after dropping partial 15-minute blocks")]
    EmptyAfterAggregation,
    #[error("cannot fit a min-max scaler on a constant series (value {0})")]
    DegenerateScaler(f64),
    #[error("cannot fit a min-max scaler on an empty series")]
    EmptyScalerInput,
    #[error("series of length {len} is too short for lookback {lookback}")]
    SeriesTooShort { len: usize, lookback: usize },
    #[error("split boundary {boundary} leaves an empty {side} set")]
    BoundaryOutOfRange {
        boundary: String,
        side: &'static str,
    },
    #[error("series timestamps are not contiguous at index {0}")]
    NotContiguous(usize),
    #[error("{0}")]
    Tensor(#[from] TensorError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Tensor(#[from] TensorError),
    #[error("input value {value} at index {index} is outside the scaled range [-1, 3]; was the window min-max scaled?")]
    UnscaledInput { index: usize, value: f64 },
    #[error("model has no fitted scaler")]
    MissingScaler,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model kind mismatch: expected {expected}, got {got}")]
    KindMismatch {
        expected: &'static str,
        got: &'static str,
    },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic header)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint payload: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter {param} at step {step}")]
    NanGradient { param: String, step: u64 },
    #[error("loss diverged at epoch {epoch} (last good checkpoint: {checkpoint:?})")]
    Diverged {
        epoch: usize,
        checkpoint: Option<PathBuf>,
    },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("actuals ({actual}) and predictions ({predicted}) differ in length")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("no samples")]
    Empty,
    #[error("actual value at index {0} is zero; MAPE undefined")]
    ZeroActual(usize),
    #[error("every point was excluded by the MAPE zero policy")]
    AllExcluded,
    #[error("reports mix models {0:?} and {1:?}")]
    MixedModels(String, String),
    #[error("reports mix scaled and original-unit metrics")]
    MixedSpaces,
}

/// Invalid user-supplied configuration (synthetic generator, run config).
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid value for {field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Umbrella error used by the experiment runner and the command-line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Short machine-parseable category used for command-line exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Data(_) => "data",
            Error::Model(_) => "model",
            Error::Checkpoint(_) => "checkpoint",
            Error::Train(_) => "train",
            Error::Metrics(_) => "metrics",
            Error::Config(_) => "config",
            Error::Context { source, .. } => source.category(),
            Error::Io(_) => "io",
            Error::Usage(_) => "usage",
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
