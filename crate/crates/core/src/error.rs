use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("invalid prices: {0}")]
    InvalidPrices(String),

    /// Linear and Cobb-Douglas demand diverges when a good is free.
    #[error("unbounded best response for buyer {buyer}: good {good} has zero price")]
    UnboundedBestResponse { buyer: usize, good: usize },

    /// No buyer holds more than the support threshold of this good.
    #[error("unpriced good {good}: no buyer holds it above the support threshold")]
    UnpricedGood { good: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MarketError> = std::result::Result<T, E>;
