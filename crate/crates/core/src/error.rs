use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or unsupported configuration. `line` is 1-based when the error
    /// originates from a config file.
    #[error("configuration error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("near-singular Gram matrix at marker {marker}: reciprocal condition {rcond:e}")]
    NearSingularGram { marker: usize, rcond: f64 },

    #[error("degenerate shift normalizer {value:e} at marker {marker}")]
    DegenerateNormalizer { marker: usize, value: f64 },

    #[error("polynomial reproduction residual {residual:e} exceeds tolerance at marker {marker}")]
    ReproductionFailure { marker: usize, residual: f64 },

    #[error("{solver} did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverDiverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("non-finite value in {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            line: None,
            message: message.into(),
        }
    }

    pub fn config_at(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures raised by the numerical machinery rather than by
    /// configuration or I/O.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NearSingularGram { .. }
                | Error::DegenerateNormalizer { .. }
                | Error::ReproductionFailure { .. }
                | Error::SolverDiverged { .. }
                | Error::NonFinite { .. }
                | Error::Geometry(_)
        )
    }
}
