use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cbg_id `{0}`: expected 12 decimal digits")]
    InvalidCbgId(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input file {0}")]
    MissingFile(PathBuf),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("duplicate cbg_id {0}")]
    DuplicateCbg(String),

    #[error("overlapping stay segments for device {0}")]
    OverlappingStays(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code for this error: 2 input/config, 3 insufficient data,
    /// 4 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InsufficientData(_) => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
