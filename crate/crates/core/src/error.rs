use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample time {time} s lies within {eps} s of a model kink (att = {att} s)")]
    KinkProximity { time: f64, att: f64, eps: f64 },

    #[error("Gauss-Newton normal equations are numerically singular")]
    SingularNormalEquations,

    #[error("Fisher information matrix is singular (condition number {condition:.3e})")]
    SingularInformation { condition: f64 },

    #[error("empirical Hessian is not negative definite (eigenvalues {eigenvalues:?})")]
    NotNegativeDefinite { eigenvalues: [f64; 2] },

    #[error("matrix is not positive definite (eigenvalues {eigenvalues:?})")]
    NotPositiveDefinite { eigenvalues: [f64; 2] },

    #[error("degenerate eigenvalues: lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e}")]
    DegenerateEigen { lambda_min: f64, lambda_max: f64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("I/O failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in field `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("size mismatch in {file}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("unsupported format_version {0}")]
    VersionUnsupported(u64),

    #[error("column `{0}` not found")]
    ColumnMissing(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }
}
