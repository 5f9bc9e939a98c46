use std::path::PathBuf;

use crate::optim::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("channel mismatch: input has {input} channels, kernels expect {kernels}")]
    ChannelMismatch { input: usize, kernels: usize },
    #[error("kernel extent {height}x{width} is not odd")]
    EvenKernel { height: usize, width: usize },
    #[error("input {height}x{width} is smaller than the {window}x{window} pooling window")]
    WindowTooLarge {
        height: usize,
        width: usize,
        window: usize,
    },
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("invalid compression plan: {0}")]
    InvalidPlan(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error("divergent loss: {0}")]
    DivergentLoss(String),
    #[error("non-finite gradient at parameter {index} (value {value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("cache boundary `{cache}` does not match sub-problem boundary `{expected}`")]
    BoundaryMismatch { expected: String, cache: String },
    #[error("sub-problem {index} diverged")]
    SubProblemDiverged {
        index: usize,
        report: Box<TrainReport>,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
