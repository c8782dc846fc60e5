use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scenario {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    /// Minimum PRB guarantees exceed the cell capacity. Only reachable if
    /// admission control let too many users in.
    #[error("cell {cell}: {users} users need {demand} PRBs at minimum, capacity is {capacity}")]
    InfeasibleAllocation {
        cell: usize,
        users: usize,
        demand: u32,
        capacity: u32,
    },

    #[error("load difference {0} outside [-1, 1]")]
    Domain(f64),

    #[error("consistency check failed at t={time}s: {message}")]
    Consistency { time: f64, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
