use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("phrase `{0}` has no vector and no fallback is configured")]
    MissingPhrase(String),
    #[error("embedding for `{phrase}` has dimension {got}, expected {expected}")]
    EmbeddingDim { phrase: String, expected: usize, got: usize },
    #[error("selected macro {0} has zero probability")]
    ZeroProbability(usize),
    #[error("non-finite {what} at epoch {epoch}; diagnostics written to {dump}")]
    NonFiniteLoss { what: &'static str, epoch: usize, dump: String },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] mavic_core::CoreError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LearnerError>;
