use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("{op}: {dim} must be {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {what} ({value}) is not divisible by {divisor}")]
    Indivisible {
        op: &'static str,
        what: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward needs a scalar output, got {len} elements")]
    NotScalar { len: usize },

    #[error("invalid model configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn mismatch(
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::ShapeMismatch {
            op,
            dim,
            expected,
            actual,
        }
    }
}
