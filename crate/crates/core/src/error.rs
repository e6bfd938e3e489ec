use thiserror::Error;

/// Errors raised by the runtime kernels, graph construction and scheduler.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("configuration error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("module `{module}` failed at update {update}")]
    ModuleFailed {
        module: String,
        update: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    #[error("routing error: {0}")]
    Routing(String),
}

impl CoreError {
    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Config {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
