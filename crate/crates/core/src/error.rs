use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{tensor}`: expected {expected}, found {found}")]
    Shape {
        tensor: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in `{tensor}`")]
    NonFinite { tensor: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("verification timed out")]
    Timeout,

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(tensor: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            tensor: tensor.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
