use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("precision not SPD")]
    NotPositiveDefinite,

    #[error("categorical weights are all zero or not finite")]
    DegenerateWeights,

    #[error("count underflow at document {doc}, topic {topic}")]
    CountUnderflow { doc: usize, topic: usize },

    #[error("class {class} coefficient update failed at iteration {iteration}: precision not SPD after jitter")]
    CoefficientUpdate { class: usize, iteration: u64 },

    #[error("inconsistent state: {0}")]
    Inconsistent(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
