use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("vector contains a non-finite element at index {0}")]
    NonFinite(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corrupted snapshot: {0}")]
    SnapshotCorrupt(String),

    #[error("unsupported snapshot version {found} (expected {expected})")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error("snapshot does not match the expected configuration: {0}")]
    SnapshotConfigMismatch(String),
}

impl Error {
    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}
