use thiserror::Error;

/// Errors raised across the simulator, the learning stack and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("could not place {pairs} transmitters with min spacing {min_dist} m in a {side} m square after {attempts} attempts")]
    PlacementFailure { pairs: usize, side: f64, min_dist: f64, attempts: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("no pair completed any packet in the episode")]
    EmptyEpisode,

    #[error("empty input")]
    EmptyInput,

    #[error("exhaustive search supports at most 3 pairs, got {0}")]
    BudgetExceeded(usize),

    #[error("training diverged at episode {episode}: {what}")]
    DivergenceDetected { episode: usize, what: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
