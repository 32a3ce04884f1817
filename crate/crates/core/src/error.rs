use thiserror::Error;

use crate::solver::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the requested function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The least-squares boundary fit left a residual above tolerance.
    #[error(
        "solve did not converge: relative residual {:.3e} exceeds tolerance {:.3e}",
        report.relative_residual,
        tolerance
    )]
    NonConvergence { report: SolveReport, tolerance: f64 },

    #[error("ill-posed configuration: {0}")]
    IllPosed(String),

    /// A column of the control operator could not be assembled.
    #[error("control basis function {index} failed: {source}")]
    ControlColumn {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter(_) | Error::Domain(_) => 2,
            Error::NonConvergence { .. }
            | Error::IllPosed(_)
            | Error::ControlColumn { .. }
            | Error::DimensionMismatch { .. } => 3,
            Error::Consistency(_) => 4,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 5,
        }
    }
}
