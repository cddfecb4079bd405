use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can surface.
///
/// The variant name doubles as the machine-readable error kind the CLI
/// reports, see [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite sample in channel {channel} at index {index}")]
    Data { channel: usize, index: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not enough samples: {0}")]
    Empty(String),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("{patches} patches exceed model capacity of {max}")]
    Capacity { patches: usize, max: usize },
    #[error("index out of range: {0}")]
    Index(String),
    #[error("non-finite gradient for parameter `{param}`")]
    Train { param: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "FormatError",
            Error::Data { .. } | Error::InvalidData(_) => "DataError",
            Error::Spec(_) => "SpecError",
            Error::Config(_) => "ConfigError",
            Error::Empty(_) => "EmptyError",
            Error::Shape { .. } => "ShapeError",
            Error::Contract(_) => "ContractError",
            Error::Capacity { .. } => "CapacityError",
            Error::Index(_) => "IndexError",
            Error::Train { .. } => "TrainError",
            Error::Io(_) => "IoError",
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
