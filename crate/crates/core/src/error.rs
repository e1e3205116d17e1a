use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error at row {row}, column {column}: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("no convergence after {iterations} iterations: {detail} (last iterate {last:?})")]
    NonConvergence {
        iterations: usize,
        detail: String,
        last: Vec<f64>,
    },

    #[error("singular matrix in {what} (smallest eigenvalue {smallest_eigenvalue:e})")]
    Singular {
        what: String,
        smallest_eigenvalue: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn dimension(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::NonConvergence { .. } | Error::Singular { .. } | Error::Numerical(_) => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::NonFinite(_) => "non_finite",
            Error::Domain(_) => "domain",
            Error::Data { .. } => "data",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Singular { .. } => "singular",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
