use std::path::PathBuf;

use cnnlayout::Layout;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cnnlayout::Error),

    #[error("{fixture}: {layout} {algorithm} disagrees with the oracle (max rel diff {diff:.3e}, tolerance {tolerance:.1e})")]
    OracleMismatch {
        fixture: String,
        layout: Layout,
        algorithm: String,
        diff: f64,
        tolerance: f64,
    },

    #[error("{0}")]
    Usage(String),

    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// 1 for bad input (flags, configs, unsupported parameters), 2 for
    /// failures of the tool itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Read { .. } => 1,
            CliError::Core(e) => match e {
                cnnlayout::Error::Calibration { .. } | cnnlayout::Error::Plan(_) => 2,
                _ => 1,
            },
            CliError::OracleMismatch { .. } | CliError::Write { .. } | CliError::Internal(_) => 2,
        }
    }
}
