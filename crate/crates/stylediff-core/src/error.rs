use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Caller passed something structurally wrong: mismatched shapes,
    /// unknown layer names, out-of-range parameters.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Loss became non-finite during optimization; carries the iteration.
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
