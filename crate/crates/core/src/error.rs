//! Error type shared by all pipeline stages.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A malformed input or artifact file (bad header, bad cache line, ...).
    #[error("format: {0}")]
    Format(String),

    /// A configuration that cannot produce a meaningful result, such as a
    /// holdout cutoff that leaves the train or test side empty.
    #[error("config: {0}")]
    Config(String),

    #[error("unknown show '{0}'")]
    UnknownShow(String),

    #[error("show '{0}' is already a node of the graph")]
    ShowAlreadyPresent(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: u32 },
}
