use chrono::NaiveDate;
use thiserror::Error;

/// Errors raised across the learning, scoring and backtesting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("panel contains no observations")]
    EmptyPanel,
    #[error("number of modalities must be at least 2, got {0}")]
    NonPositiveModalities(usize),
    #[error("feature definition mismatch: {0}")]
    SpecMismatch(String),
    #[error("split point {n} is outside (0, {len})")]
    BadSplitPoint { n: usize, len: usize },
    #[error("feature vector has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("learning set is empty")]
    EmptyLearningSet,
    #[error("condition has no activation on the learning set")]
    NoActivations,
    #[error("no rule of the rule set is active for this feature vector")]
    NoActiveRule,
    #[error("loss is not finite (prediction {prediction}, outcome {outcome})")]
    NonFiniteLoss { prediction: f64, outcome: f64 },
    #[error("no stock left after filtering at {0}")]
    EmptyAfterFilter(String),
    #[error("no sector of the selection has benchmark weight")]
    NoPopulatedSector,
    #[error("missing price data for {stock_id} on {date}")]
    MissingPriceData { stock_id: String, date: NaiveDate },
    #[error("series date grids differ")]
    GridMismatch,
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("unknown learning year {0}")]
    UnknownLearningYear(i32),
    #[error("inconsistent synthetic spec: {0}")]
    InconsistentSpec(String),
    #[error("invalid universe: {0}")]
    InvalidUniverse(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from user-supplied configuration or parameters
    /// rather than from the data being processed.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidParameter(_)
                | Error::NonPositiveModalities(_)
                | Error::BadSplitPoint { .. }
                | Error::UnknownLearningYear(_)
                | Error::InconsistentSpec(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
