pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] stylediff_core::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("font error: {0}")]
    Font(String),

    #[error("invalid experiment spec: {field}: {message}")]
    Spec { field: String, message: String },

    #[error("weight file error: {0}")]
    Weights(String),
}

impl Error {
    pub fn spec(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether this is a usage/validation problem (CLI exit code 2)
    /// rather than a runtime failure (exit code 1).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Spec { .. } | Error::Core(stylediff_core::Error::InvalidArgument(_))
        )
    }
}
