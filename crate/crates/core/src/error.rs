use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("constraint matrix has full column rank {rank}; only the zero perturbation is valid")]
    DegenerateConstraint { rank: usize },
    #[error("constraint matrix has rank 0")]
    EmptyConstraint,
    #[error("normal equations are singular within tolerance")]
    SingularSystem,
    #[error("measurement matrix is not full column rank ({rows}x{cols}, rank {rank})")]
    RankDeficientH { rows: usize, cols: usize, rank: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed file {}: {reason}", path.display())]
    MalformedFile { path: PathBuf, reason: String },
    #[error("invalid scenario case {0}")]
    InvalidCase(usize),
    #[error("sample generation stalled after {attempts} attempts: {what}")]
    GenerationStall { what: &'static str, attempts: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
