use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed IDX file {path} at byte {offset}: {reason}")]
    IdxFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("CSV error in {path} (row {row}, column {column}): {reason}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite feature value in record {index}")]
    NonFiniteFeature { index: usize },

    #[error("dataset is empty: {0}")]
    EmptyDataset(&'static str),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("{players} players exceeds the cap of {cap}")]
    TooManyPlayers { players: usize, cap: usize },

    #[error("non-finite characteristic value for coalition {coalition:#b}")]
    NonFiniteValue { coalition: u32 },

    #[error("grand-coalition value {0} is not positive; shares cannot be normalized")]
    NonPositiveTotal(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown party id {0}")]
    UnknownParty(u32),

    #[error("duplicate party id {0}")]
    DuplicateParty(u32),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed model blob: {0}")]
    ModelBlob(String),

    #[error("gain evaluation failed for coalition {coalition:#b}: {source}")]
    Coalition {
        coalition: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("gain evaluation failed for task of party {task} on coalition {coalition:#b}: {source}")]
    TaskCoalition {
        task: u32,
        coalition: u32,
        #[source]
        source: Box<Error>,
    },
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
