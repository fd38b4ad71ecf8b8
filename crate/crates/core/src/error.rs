use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid budget: k={k} exceeds {n} feasible nodes")]
    InvalidBudget { k: usize, n: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("iteration did not converge after {iters} iterations (last change {last_delta:e})")]
    NonConverged {
        iters: usize,
        last_delta: f64,
        last: Vec<f64>,
    },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("instance generation failed: {0}")]
    GenerationFailed(String),
    #[error("variant {0} is not supported by this planner")]
    UnsupportedVariant(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("episode done: no feasible action")]
    EpisodeDone,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tape state: {0}")]
    State(String),
    #[error("training diverged at episode {episode}")]
    TrainingDiverged { episode: usize },
    #[error("ingest error at {path}:{line}: {msg}")]
    Ingest {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
