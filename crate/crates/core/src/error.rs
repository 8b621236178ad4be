use thiserror::Error;

/// Errors produced anywhere in the restoration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts or option values that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    /// A checkpoint or image file whose contents do not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite loss at iteration {iter} (lr {lr:e}, grad norm {grad_norm:e})")]
    Diverged { iter: u64, lr: f64, grad_norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for building an [`Error::Config`].
pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
