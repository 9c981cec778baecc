use std::path::PathBuf;

use thiserror::Error;

use crate::sem::SemParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Cholesky factorization met a non-positive pivot (0-based index).
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    Singular { pivot: usize, value: f64 },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("SEM fit did not converge after {evals} evaluations (best loglik {loglik})")]
    NonConvergence {
        evals: usize,
        loglik: f64,
        best: Box<SemParams>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible scenario: {0}")]
    Scenario(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::MissingValue { .. }
            | Error::Io { .. }
            | Error::Csv(_) => 2,
            Error::Singular { .. }
            | Error::NonConvergence { .. }
            | Error::Numerical(_) => 3,
            Error::Domain(_) | Error::Json(_) | Error::Scenario(_) | Error::Config(_) => 4,
        }
    }
}
