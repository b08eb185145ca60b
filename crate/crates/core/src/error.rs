use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StoneError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StoneError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Invalid configuration; `field` is a dotted path when one applies.
    #[error("config error at {field}: {detail}")]
    Config { field: String, detail: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("ingestion error at row {row}: {detail}")]
    Ingestion { row: usize, detail: String },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// NaN/Inf produced or consumed where finite values are required.
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StoneError {
    pub(crate) fn dims(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        StoneError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        StoneError::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoneError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tools.
    ///
    /// 2 = configuration/schema, 3 = data, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            StoneError::Config { .. } | StoneError::Contract(_) => 2,
            StoneError::Ingestion { .. }
            | StoneError::Format { .. }
            | StoneError::Range(_)
            | StoneError::Io { .. } => 3,
            StoneError::Dimension { .. } => 2,
            StoneError::Domain { .. }
            | StoneError::UndefinedMetric(_)
            | StoneError::Numerical { .. } => 4,
        }
    }
}
