use std::path::PathBuf;

use thiserror::Error;

/// Which log-barrier regularizer left its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Barrier {
    /// `ΩᵀΩ` is numerically singular (rank deficiency).
    Rank,
    /// Two rows are (anti)parallel.
    Coherence,
}

impl std::fmt::Display for Barrier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Barrier::Rank => f.write_str("rank"),
            Barrier::Coherence => f.write_str("coherence"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{barrier} barrier violated: {detail}")]
    BarrierViolation { barrier: Barrier, detail: String },

    #[error("degenerate retraction step: row {row} of the trial point has norm {norm:e}")]
    DegenerateStep { row: usize, norm: f64 },

    #[error("training set incomplete: accepted {achieved} of {requested} patches after {draws} draws")]
    TrainingSetIncomplete {
        achieved: usize,
        requested: usize,
        draws: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("adjoint test failed for {op}: relative mismatch {mismatch:e}")]
    AdjointMismatch { op: String, mismatch: f64 },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for barrier and degenerate-step failures, which a line search
    /// treats as "step too long".
    pub fn is_domain_violation(&self) -> bool {
        matches!(self, Error::BarrierViolation { .. } | Error::DegenerateStep { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
