use thiserror::Error;

/// Unified error type for the whole crate.
///
/// The split between `Config` and `InvalidInput` is deliberate: `Config`
/// means the caller wired incompatible pieces together (layer shapes that
/// cannot compose, mismatched dimensions), while `InvalidInput` means the
/// structure was fine but this particular value is unusable (sequence too
/// short, NaN logits, label out of range).
#[derive(Debug, Error)]
pub enum Error {
    /// Structural misconfiguration: incompatible shapes, bad hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value that cannot be processed even though the setup is valid.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value fell outside the representable range of the fixed-point codec.
    #[error("range error: {0}")]
    Range(String),

    /// An accumulation exceeded a declared budget (e.g. homomorphic summands).
    #[error("overflow error: {0}")]
    Overflow(String),

    /// Peers disagree about keys, architectures or wire framing.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Key generation or ciphertext manipulation failed.
    #[error("crypto error: {0}")]
    Crypto(String),

    /// Malformed on-disk data (dataset files, configs, serialized blobs).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }

    pub fn overflow(msg: impl Into<String>) -> Self {
        Error::Overflow(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn crypto(msg: impl Into<String>) -> Self {
        Error::Crypto(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
