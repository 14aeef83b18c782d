use thiserror::Error;

/// Errors produced across the allocation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid price ladder: {0}")]
    Ladder(String),
    #[error("invalid budget target: {0}")]
    Budget(String),
    #[error("level {level} out of range 1..={max}")]
    Level { level: usize, max: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("bad data: {0}")]
    Data(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("problem too large: {0}")]
    Size(String),
    #[error("degenerate budget: {0}")]
    DegenerateBudget(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
