use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}: line {line}: {msg}")]
    Format { path: PathBuf, line: u64, msg: String },

    #[error("time went backwards: {to} < {from}")]
    Ordering { from: f64, to: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("solver did not converge after {iters} iterations (kkt residual {kkt:.3e})")]
    NonConvergence {
        iters: usize,
        kkt: f64,
        trace: Vec<crate::estimate::TracePoint>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), line, msg: msg.into() }
    }

    /// Process exit code for the command-line front end: 1 for bad input,
    /// 2 for numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::NonConvergence { .. } | Error::Size(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
