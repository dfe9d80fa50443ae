use thiserror::Error;

/// Errors raised across the library. `Construction` and `Config` indicate
/// invalid inputs, `Domain` an argument outside an operation's admissible
/// range, `Numeric` over/underflow or non-finite intermediate values, and
/// `Unsupported` an operation the given kernel cannot perform.
#[derive(Debug, Error)]
pub enum RmbError {
    #[error("construction error: {0}")]
    Construction(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("tolerance failure: {0}")]
    Tolerance(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RmbError>;
