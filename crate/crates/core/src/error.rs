use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed user input: tokens, parameters, flags.
    #[error("invalid input: {0}")]
    Input(String),

    /// Input files that parse but violate a data invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("eigensolver failed to converge (max residual {residual:.3e})")]
    EigenConvergence { residual: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 1,
            Error::Data(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 2,
            Error::Contract(_) | Error::EigenConvergence { .. } => 3,
        }
    }
}
