use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    /// A cache was handed to a backward pass it was not produced for.
    #[error("cache does not match this layer or network: {0}")]
    CacheMismatch(String),

    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { epoch: usize, what: String },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("unstable integration: {0}")]
    Unstable(String),

    #[error("decode error in field `{field}`: {msg}")]
    Decode { field: String, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no static answer for {0}")]
    NoStaticAnswer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn decode(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Decode {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by numerics (divergence, NaN) rather than input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteState { .. } | Error::Unstable(_)
        )
    }
}
