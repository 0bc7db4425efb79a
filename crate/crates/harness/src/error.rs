use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}")]
    ConfigFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Learner(#[from] mavic_learner::LearnerError),
    #[error(transparent)]
    Solver(#[from] mavic_solver::SolverError),
    #[error(transparent)]
    Core(#[from] mavic_core::CoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Errors caused by the caller's input rather than by a run going wrong.
    pub fn is_validation(&self) -> bool {
        use mavic_core::CoreError as C;
        use mavic_learner::LearnerError as L;
        match self {
            HarnessError::Config(_) | HarnessError::ConfigFile { .. } => true,
            HarnessError::Core(C::Config(_) | C::UnknownKeys(_) | C::UnknownEnv(_)) => true,
            HarnessError::Learner(L::Config(_) | L::Checkpoint(_) | L::MissingPhrase(_) | L::EmbeddingDim { .. }) => true,
            HarnessError::Learner(L::Core(C::Config(_) | C::UnknownKeys(_) | C::UnknownEnv(_))) => true,
            HarnessError::Solver(mavic_solver::SolverError::EmptyGrid | mavic_solver::SolverError::Core(C::Config(_))) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
