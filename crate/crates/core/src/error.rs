use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("macro {macro_id} ({name}) is not initiable for agent {agent}")]
    NotInitiable {
        agent: usize,
        macro_id: usize,
        name: String,
    },
    #[error("cannot step from a terminal state")]
    TerminalState,
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("unregistered instruction class {0}")]
    UnknownClass(usize),
    #[error("unknown environment `{0}` (expected one of chain, box_pushing, overcooked, warehouse)")]
    UnknownEnv(String),
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
