use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("price {0} EUR/MWh is not on the 0.1 grid between -500 and 3000")]
    OffGridPrice(f64),

    #[error("volume {0} MWh is negative or not finite")]
    InvalidVolume(f64),

    #[error("supply never covers demand on the price grid (S(3000) = {supply} < D(3000) = {demand})")]
    NoIntersection { supply: f64, demand: f64 },

    #[error("both supply and demand curves are identically zero")]
    EmptyMarket,

    #[error("curve is not monotone: {0}")]
    NonMonotone(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("no reference date of the same day type within {horizon} days before {date}")]
    NoReference { date: chrono::NaiveDate, horizon: u32 },

    #[error("missing price history: {0}")]
    MissingHistory(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("operation requires a {expected} model, got {actual}")]
    WrongFamily {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    MalformedFile { path: PathBuf, message: String },

    #[error("model `{model}` failed: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::MalformedFile { .. } | Error::MalformedRow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
