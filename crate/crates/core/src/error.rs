use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("events reference unknown patient ids: {}", .0.join(", "))]
    UnknownPatients(Vec<String>),

    #[error("duplicate patient id {0:?}")]
    DuplicatePatient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("vocabulary mode mismatch: file is {found}, run expects {expected}")]
    ModeMismatch { expected: String, found: String },

    #[error("design matrix is rank deficient; aliased columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("REML optimization did not converge: {0}")]
    NonConvergence(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical core rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_) | Error::NonConvergence(_) | Error::Numerical(_)
        )
    }
}
