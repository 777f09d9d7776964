use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown parameter set `{0}`")]
    UnknownParams(String),
    #[error("{len} values exceed the {slots} available slots")]
    Capacity { len: usize, slots: usize },
    #[error("no Galois key for rotation {0}")]
    MissingGaloisKey(String),
    #[error("relinearization key not available")]
    MissingRelinKey,
    #[error("operand levels differ ({0} vs {1})")]
    LevelMismatch(usize, usize),
    #[error("operation requires the top modulus level, ciphertext is at level {0}")]
    NotTopLevel(usize),
    #[error("unsupported ciphertext size {0}")]
    CiphertextSize(usize),
    #[error("parameter mismatch: {0}")]
    ParamsMismatch(String),
    #[error("noise budget exhausted; decryption would be meaningless")]
    NoiseExhausted,
    #[error("decode error: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, HeError>;
