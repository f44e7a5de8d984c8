use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid level index {0}, expected 1, 2 or 3")]
    InvalidLevel(usize),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// The Gram matrix of the basis functions is numerically singular. At
    /// `Δω = 0` the two split lines coincide and the single-frequency model
    /// should be used instead.
    #[error("degenerate basis (eigenvalue ratio {ratio:.3e}); use the reduced single-frequency model")]
    DegenerateBasis { ratio: f64 },

    #[error("empty grid")]
    EmptyGrid,

    #[error("empty or inverted time range [{start}, {end}]")]
    EmptyRange { start: f64, end: f64 },

    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),

    #[error("likelihood surface has no finite cell")]
    AllDegenerate,

    #[error("reference Hamiltonian is zero")]
    ZeroReference,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
