use thiserror::Error;

use crate::topology::ChainId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group element encoding")]
    InvalidEncoding,
    #[error("invalid scalar encoding")]
    InvalidScalar,
    #[error("identity element is not a valid key")]
    IdentityElement,
    #[error("zero is not a valid private key")]
    ZeroScalar,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("group index {group} outside 1..={max}")]
    GroupOutOfRange { group: u32, max: u32 },
    #[error("server list is empty")]
    NoServers,
    #[error("plaintext of {len} bytes exceeds the {capacity}-byte message capacity")]
    Oversized { len: usize, capacity: usize },
    #[error("no public keys for chain {0}")]
    MissingChainKeys(ChainId),
    #[error("batch of {0} entries is too small to mix")]
    BatchTooSmall(usize),
    #[error("batch is for hop {batch} but server sits at position {server}")]
    HopMismatch { batch: u32, server: u32 },
    #[error("batch entries have unequal ciphertext lengths")]
    RaggedBatch,
    #[error("malformed wire message: {0}")]
    Malformed(&'static str),
    #[error("mailbox round is closed")]
    RoundClosed,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
