use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    /// A loss, gradient or parameter became non-finite during training.
    #[error("run diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: u64, reason: String },

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unknown dataset id `{0}`")]
    UnknownDataset(String),

    #[error("IDX file {path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    IdxBadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("IDX file {path}: truncated, expected {expected} bytes but found {actual}")]
    IdxTruncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("IDX file {path}: dimensions {dims:?} overflow the addressable size")]
    IdxDimensionOverflow { path: PathBuf, dims: Vec<u32> },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("histogram mismatch: {0}")]
    HistogramMismatch(String),

    #[error("grid does not cover data sample ({x}, {y})")]
    GridCoverage { x: f64, y: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("infeasible verification spec: {0}")]
    Infeasible(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = usage/config, 3 = runtime divergence, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } | Error::NonConvergence { .. } => 3,
            Error::Io { .. }
            | Error::IdxBadMagic { .. }
            | Error::IdxTruncated { .. }
            | Error::IdxDimensionOverflow { .. }
            | Error::Checkpoint { .. } => 4,
            _ => 2,
        }
    }

    /// Short machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Diverged { .. } => "diverged",
            Error::Config { .. } => "config",
            Error::UnknownDataset(_) => "unknown_dataset",
            Error::IdxBadMagic { .. } => "idx_bad_magic",
            Error::IdxTruncated { .. } => "idx_truncated",
            Error::IdxDimensionOverflow { .. } => "idx_dimension_overflow",
            Error::Checkpoint { .. } => "checkpoint",
            Error::HistogramMismatch(_) => "histogram_mismatch",
            Error::GridCoverage { .. } => "grid_coverage",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Infeasible(_) => "infeasible",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }
}
