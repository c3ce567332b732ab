use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is not positive definite (leading minor {minor} fails)")]
    NotPositiveDefinite { minor: usize },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("duplicate visit times at indices ({0}, {1}) make the correlation matrix singular")]
    DuplicateTimes(usize, usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
