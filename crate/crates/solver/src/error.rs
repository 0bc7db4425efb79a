use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("bad tabular model: {0}")]
    Shape(String),
    #[error("linear system is singular ({0})")]
    Singular(&'static str),
    #[error("policy enumeration too large: {0} candidate policies")]
    TooManyPolicies(u128),
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error(transparent)]
    Core(#[from] mavic_core::CoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;
