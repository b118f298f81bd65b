use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Some symplectic singular values fell below the rank tolerance.
    #[error("rank-deficient input: {count} symplectic singular value(s) below tolerance")]
    RankDeficient { count: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dense budget exceeded: matrix dimension {dim} > {limit}, reduce n")]
    Budget { dim: usize, limit: usize },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Numerical(_) => "numerical",
            Error::Budget { .. } => "budget",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
