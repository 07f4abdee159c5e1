use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("angle {beta} rad is not in the configured angle set")]
    AngleNotConfigured { beta: f64 },

    #[error("inconsistent histogram: {0}")]
    InconsistentHistogram(String),

    #[error("n_max = {n_max} leaves truncation mass {mass:.3e}; use n_max >= {required}")]
    TruncationTooLarge { n_max: u64, mass: f64, required: u64 },

    #[error("term magnitudes overflow even in log space at n = {n}")]
    LogSpaceOverflow { n: u64 },

    #[error(
        "reconstructed normalization {normalization:.4} deviates from 1 by more than {bound}; \
         enlarge the grid or weaken the regularization"
    )]
    NormalizationFailure { normalization: f64, bound: f64 },

    #[error("grid does not cover the tail of the order-{k} moment (outer-band share {share:.3e})")]
    TailCoverage { k: usize, share: f64 },

    #[error("moments required up to order {required}, only {available} available")]
    MissingMoments { required: usize, available: usize },

    #[error("linear solve produced a non-finite result at N_c = {n_cutoff}")]
    NonFiniteSolve { n_cutoff: usize },

    #[error("state `{kind}` has a negative 2D quasi-density and cannot be sampled per pulse; use the histogram-level path")]
    NotSampleable { kind: String },

    #[error("too few records for half-sampling: {0}")]
    TooFewRecords(String),

    #[error("parse error in {path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("unknown file schema in {0}")]
    UnknownSchema(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
