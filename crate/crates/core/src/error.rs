use thiserror::Error;

/// Errors raised by the model-tree inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("leaf has no children: node {0} is at the maximum depth")]
    LeafHasNoChildren(usize),
    #[error("enumeration refused: {0}")]
    Refused(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value {value} outside the support of the {family} model")]
    OutOfSupport { family: &'static str, value: f64 },
    #[error("cannot exclude the only feature")]
    CannotExcludeOnlyFeature,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Bad input or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::InvalidConfig(_)
            | Self::Data { .. }
            | Self::DimensionMismatch { .. }
            | Self::OutOfSupport { .. }
            | Self::Unsupported(_)
            | Self::Refused(_)
            | Self::CannotExcludeOnlyFeature => true,
            Self::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            Self::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
                _ => true,
            },
            Self::LeafHasNoChildren(_) | Self::EmptyEnsemble => false,
        }
    }
}
