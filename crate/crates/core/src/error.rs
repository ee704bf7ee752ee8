use thiserror::Error;

/// Errors produced by the optimizer and its components.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A node evaluator failed while executing a system.
    #[error("execution failed at node {node}: {message}")]
    Execution { node: usize, message: String },

    /// A remote node endpoint failed (timeout, non-2xx, malformed body).
    #[error("remote evaluator {endpoint} failed at node {node}: {message}")]
    Remote { endpoint: String, node: usize, message: String },

    /// Utility evaluation failed for a swarm member or assignment.
    #[error("utility evaluation failed for {what} {index}: {source}")]
    Utility {
        what: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// A configuration value is missing, unknown or out of range.
    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: msg.into() }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Execution { .. } => "execution",
            Error::Remote { .. } => "remote",
            Error::Utility { .. } => "utility",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
