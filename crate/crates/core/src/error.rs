use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{quantity} = {value} is outside the valid domain [{lo}, {hi}]")]
    Domain {
        quantity: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("fundamental diagram has no interior maximum in (0, {n_max})")]
    NoInteriorMaximum { n_max: f64 },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("quadratic program did not converge within {iterations} iterations")]
    MaxIterations { iterations: usize },

    #[error("configuration error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("scenario `{scenario}` failed at step {step}: {source}")]
    Run {
        scenario: String,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Coarse category used by the CLI to choose an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } | Error::InvalidParameter { .. } => ErrorCategory::Config,
            Error::Infeasible
            | Error::MaxIterations { .. }
            | Error::NotPositiveDefinite { .. } => ErrorCategory::Solver,
            Error::Run { source, .. } => source.category(),
            Error::Io(_) | Error::Csv(_) => ErrorCategory::Io,
            Error::Domain { .. } | Error::NoInteriorMaximum { .. } | Error::Dimension { .. } => {
                ErrorCategory::Model
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Solver,
    Model,
    Io,
}
