use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum DpdError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("ill-conditioned problem ({what}): condition estimate {condition:e}")]
    Conditioning { what: String, condition: f64 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("correctness failure: {0}")]
    Correctness(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, DpdError>;

impl DpdError {
    pub fn config(msg: impl Into<String>) -> Self {
        DpdError::Config(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DpdError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        DpdError::Json {
            context: context.into(),
            source,
        }
    }
}
