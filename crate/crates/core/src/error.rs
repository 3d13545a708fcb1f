use std::path::PathBuf;

/// Errors raised by the clustering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-numeric value {value:?} at row {row}, column {column}")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("duplicate observation id {0:?}")]
    DuplicateId(String),
    #[error("need at least {min} observations, found {found}")]
    TooFewObservations { min: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is asymmetric at ({i}, {j}): |difference| = {difference:e}")]
    Asymmetric { i: usize, j: usize, difference: f64 },
    #[error("matrix is not positive semidefinite: minimum eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },
    #[error("negative dissimilarity {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("invalid cluster count {k} for {n} items")]
    InvalidK { k: usize, n: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("observation ids differ between inputs at position {position}: {left:?} vs {right:?}")]
    IdMismatch {
        position: usize,
        left: String,
        right: String,
    },
    #[error("pair ({i}, {j}) was never sampled together; increase resamples or item fraction")]
    InsufficientCoverage { i: usize, j: usize },
    #[error("embedding is not valid for kernel {kernel}: residual trace {residual:e}")]
    InvalidEmbedding { kernel: usize, residual: f64 },
    #[error("weight QP did not converge after {iterations} iterations (KKT residual {residual:e})")]
    QpFailed { iterations: usize, residual: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable code used in experiment error logs.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv { .. } | Error::RaggedRow { .. } | Error::NonNumeric { .. } => "parse",
            Error::NonFinite { .. } => "non-finite",
            Error::DuplicateId(_) => "duplicate-id",
            Error::TooFewObservations { .. } => "too-few-observations",
            Error::NotSquare { .. } | Error::Asymmetric { .. } => "asymmetric",
            Error::NotPsd { .. } => "not-psd",
            Error::NegativeEntry { .. } => "negative-entry",
            Error::InvalidK { .. } => "invalid-k",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::IdMismatch { .. } => "id-mismatch",
            Error::InsufficientCoverage { .. } => "insufficient-coverage",
            Error::InvalidEmbedding { .. } => "invalid-embedding",
            Error::QpFailed { .. } => "qp-failed",
            Error::Degenerate(_) => "degenerate",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Config(_) => "config",
        }
    }
}
