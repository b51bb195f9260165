use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DipoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
}

impl DipoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DipoError::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        DipoError::InvalidConfig {
            field,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DipoError>;
