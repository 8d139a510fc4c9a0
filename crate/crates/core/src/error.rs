use thiserror::Error;

/// Errors raised by the tensor, decomposition, layer and training code.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value is outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Operand shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An iterative routine failed to converge or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A closed-form quantity is undefined for the given input (e.g. infinite SNR).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed binary input.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Lookup of a layer, mode or record that does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
