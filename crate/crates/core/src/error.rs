use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
///
/// The variants line up with the CLI exit codes: configuration problems,
/// I/O, dataset protocol violations and checkpoint problems are kept apart
/// so that callers can react to each class separately.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a shape or domain precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training failed at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("scoring failed in flow layer {layer}: {message}")]
    Scoring { layer: usize, message: String },

    /// A normal-only split contains an anomalous sample, or a split is
    /// missing/empty.
    #[error("dataset protocol violation ({}): {message}", .path.display())]
    Protocol { path: PathBuf, message: String },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn protocol(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Protocol {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg()))
    }
}
