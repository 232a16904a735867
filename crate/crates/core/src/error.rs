use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the forecasting pipeline.
///
/// Each variant falls into one of four categories (config, data, numeric,
/// checkpoint) that map onto process exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("data validation error: {0}")]
    DataValidation(String),

    #[error("windowing error: {0}")]
    Windowing(String),

    #[error("ingestion error at row {row}: {msg}")]
    Ingestion { row: usize, msg: String },

    #[error("mask length {l_mask} out of range [0, {max}]")]
    MaskBounds { l_mask: usize, max: usize },

    #[error("horizon error: {0}")]
    Horizon(String),

    #[error("metadata error: cycle `{cycle}` index {index} outside [0, {cardinality})")]
    Metadata {
        cycle: String,
        index: usize,
        cardinality: usize,
    },

    #[error("lag configuration error: max_lag {max_lag} must be < patch count {patches}")]
    LagConfig { max_lag: usize, patches: usize },

    #[error("adapter shape error: {0}")]
    AdapterShape(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, reader supports {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("weight transfer error: {0}")]
    Transfer(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the error's category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::LagConfig { .. } | Error::AdapterShape(_) => 2,
            Error::DataValidation(_)
            | Error::Windowing(_)
            | Error::Ingestion { .. }
            | Error::MaskBounds { .. }
            | Error::Horizon(_)
            | Error::Metadata { .. }
            | Error::Shape(_)
            | Error::Metric(_)
            | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
            Error::Checkpoint(_) | Error::CheckpointVersion { .. } | Error::Transfer(_) => 5,
        }
    }
}
