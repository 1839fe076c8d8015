use thiserror::Error;

pub type Result<T> = std::result::Result<T, NecError>;

#[derive(Debug, Error)]
pub enum NecError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("messages out of time order in event {event}: {detail}")]
    Ordering { event: String, detail: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("session is closed; a decision was already emitted")]
    SessionClosed,

    #[error("invalid state: {0}")]
    State(String),

    #[error("need at least {needed} events, got {got}")]
    TooFew { needed: usize, got: usize },

    #[error("training diverged at epoch {epoch} on event {event}: loss = {loss}")]
    Divergence { epoch: usize, event: String, loss: f64 },

    #[error("unsupported checkpoint format version {0}")]
    Version(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NecError {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        NecError::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
