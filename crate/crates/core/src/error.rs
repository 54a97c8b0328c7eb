use thiserror::Error;

use crate::maurey::SparseApproxResult;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("coefficient budget violated: norm {norm} exceeds radius {radius}")]
    Constraint { norm: f64, radius: f64 },

    /// No rounding realization met the approximation bound. Carries the best
    /// draw seen so callers can inspect how close it came.
    #[error("no realization within the bound after {draws} draws (best excess {})", best.achieved_excess)]
    RetryExhausted {
        draws: usize,
        best: Box<SparseApproxResult>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dictionary size {m} exceeds the enumeration cap {cap}; supply an explicit model list")]
    Capacity { m: usize, cap: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("candidate list regime violated: {0}")]
    Regime(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("experiment failed: {failures} of {replicates} replicates errored (first: {first})")]
    Experiment {
        failures: usize,
        replicates: usize,
        first: String,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than by a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Constraint { .. }
                | Error::Config(_)
                | Error::Data(_)
                | Error::Regime(_)
                | Error::Parse { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
