use thiserror::Error;

#[derive(Debug, Error)]
pub enum LveError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("cap exceeded: {what} = {got}, cap = {cap}")]
    CapExceeded {
        what: &'static str,
        got: usize,
        cap: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("index out of range: {what} = {got}, limit = {limit}")]
    OutOfRange {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("positivity failure: {0}")]
    PsdFailure(String),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("integration failure: {0}")]
    IntegrationFailure(String),

    #[error("insufficient dynamic range: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LveError>;
