use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),

    #[error("operation requires a relu network, got {0}")]
    ActivationNotSupported(&'static str),

    #[error("operation requires zero biases")]
    BiasNotSupported,

    #[error("singular kernel: lambda_min {lambda_min:e} + jitter {jitter:e} <= 1e-12 * lambda_max {lambda_max:e}")]
    SingularKernel {
        lambda_min: f64,
        lambda_max: f64,
        jitter: f64,
    },

    #[error("primal matrix is rank deficient (lambda_min {lambda_min:e}, lambda_max {lambda_max:e})")]
    RankDeficient { lambda_min: f64, lambda_max: f64 },

    #[error("adaptive closed form: inner solve failed at step {step}")]
    StepSolve { step: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid batch size {batch_size} for {n} samples")]
    InvalidBatchSize { batch_size: usize, n: usize },

    #[error("invalid learning rate {0}")]
    InvalidLearningRate(f64),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("non-finite value at step {step}")]
    Diverged { step: usize },

    #[error("empty trace")]
    EmptyTrace,

    #[error("non-positive lambda_max {0:e}")]
    NonPositiveSpectrum(f64),

    #[error("idx: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("idx: truncated file {path}")]
    Truncated { path: PathBuf },

    #[error("idx: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("malformed data file {path}: {msg}")]
    MalformedData { path: PathBuf, msg: String },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("cannot read spec file {path}: {source}")]
    SpecFile {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
