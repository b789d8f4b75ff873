use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called in a state that cannot support it
    /// (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// A configuration value is out of range or internally inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// A caller-supplied argument is invalid.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An operation that requires data received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A file could not be parsed. Carries the 1-based line number when known.
    #[error("load error at {path}:{line}: {msg}")]
    Load {
        path: String,
        line: usize,
        msg: String,
    },

    /// The external embedding service failed or returned garbage.
    #[error("embedding encoder: {0}")]
    Encoder(String),

    /// The embedding service answered, but with a malformed or
    /// wrong-width payload.
    #[error("embedding protocol: {0}")]
    Protocol(String),

    /// An API contract was violated (e.g. a value that must come from the
    /// differentiable sampler did not).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
