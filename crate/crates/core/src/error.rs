use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported number of experimental arms: {0} (supported range 1..=4)")]
    ArmCount(usize),

    #[error("degenerate probability vector: {0}")]
    Degenerate(String),

    #[error("no feasible design: {0}")]
    Infeasible(String),

    #[error("design validation failed: {0}")]
    Validation(String),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("problem too large for the exact oracle: {0}")]
    OracleScale(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
