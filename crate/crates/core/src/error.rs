use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate variable in column {column}: {reason}")]
    DegenerateColumn { column: usize, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("negative value {value} at row {row}, column {column}")]
    NegativeValue { row: usize, column: usize, value: f64 },

    #[error("matrix is not positive definite ({context}); eigenvalue range [{min_eig:e}, {max_eig:e}]")]
    NotPositiveDefinite {
        context: String,
        min_eig: f64,
        max_eig: f64,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing columns: {0}")]
    MissingColumns(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::NotPositiveDefinite { .. } | Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-parsable tag for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "E_DOMAIN",
            Error::DimensionMismatch { .. } => "E_DIM",
            Error::DegenerateColumn { .. } => "E_DEGENERATE",
            Error::InsufficientData(_) => "E_INSUFFICIENT",
            Error::NegativeValue { .. } => "E_NEGATIVE",
            Error::NotPositiveDefinite { .. } => "E_NOT_PD",
            Error::Numeric(_) => "E_NUMERIC",
            Error::Parse { .. } => "E_PARSE",
            Error::MissingColumns(_) => "E_COLUMNS",
            Error::Config(_) => "E_USAGE",
            Error::ModelFile(_) => "E_MODEL",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }

    pub(crate) fn in_column(self, column: usize) -> Error {
        match self {
            Error::InsufficientData(reason) | Error::Domain(reason) => {
                Error::DegenerateColumn { column, reason }
            }
            Error::DegenerateColumn { reason, .. } => Error::DegenerateColumn { column, reason },
            other => other,
        }
    }
}
