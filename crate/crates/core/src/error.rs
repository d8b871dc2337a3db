use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("grounding error: {0}")]
    Grounding(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("sampling produced non-finite values at step {step}")]
    Sampling { step: usize },

    #[error("training diverged at step {step} (loss {loss})")]
    Training { step: usize, loss: f64 },

    #[error("metric error: {0}")]
    Metric(String),

    /// An ablation cell failed; carries that failure's exit code.
    #[error("ablation cell {cell} failed: {message}")]
    CellFailed { cell: String, message: String, exit_code: i32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Persistence {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Persistence { .. }
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Contract(_)
            | Error::Grounding(_)
            | Error::Conditioning(_)
            | Error::Analysis(_) => 3,
            Error::Sampling { .. } | Error::Training { .. } | Error::Metric(_) => 4,
            Error::CellFailed { exit_code, .. } => *exit_code,
        }
    }
}
