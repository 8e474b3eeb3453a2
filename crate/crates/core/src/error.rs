use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, thresholds or coefficients that cannot describe a valid run.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared in parameters, gradients or losses.
    #[error("numeric error in layer {layer}: {detail}")]
    Numeric { layer: usize, detail: String },

    /// Training diverged during a federated round.
    #[error("training diverged at round {round}: {detail}")]
    Diverged { round: usize, detail: String },

    /// A federated protocol step received inputs it cannot act on.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A binary or text artifact did not match its declared layout.
    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
