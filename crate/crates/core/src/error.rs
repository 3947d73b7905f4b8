use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// The input is well-formed but describes an invalid model.
    #[error("invalid model: {0}")]
    Structure(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("memory budget error: {0}")]
    Budget(String),

    #[error(
        "infeasible block plan: bucket {bucket} needs {required} entries, budget is {available}"
    )]
    InfeasibleBudget {
        bucket: usize,
        required: u64,
        available: u64,
    },

    #[error("in-memory table of {needed} bytes exceeds the {limit} byte limit")]
    MemoryExceeded { needed: u64, limit: u64 },

    #[error("brute force needs {assignments} assignments, cap is {cap}")]
    OracleCap { assignments: u128, cap: u64 },

    #[error("storage error on {}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("disk full while writing {}", path.display())]
    DiskFull { path: PathBuf },

    #[error("block file {} is missing", path.display())]
    MissingBlock { path: PathBuf },

    #[error("block file {} holds {found} bytes, expected {expected}", path.display())]
    CorruptBlock {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    /// The external engine reached a state its scheduler should make impossible.
    #[error("scheduler invariant violated: {0}")]
    Invariant(String),

    #[error("table over {0} variables is too large to index")]
    TableOverflow(usize),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::StorageFull || source.raw_os_error() == Some(28) {
            Error::DiskFull { path }
        } else {
            Error::Storage { path, source }
        }
    }
}
