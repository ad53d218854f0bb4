use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("point ({lon}, {lat}) lies outside the simulation region")]
    OutOfRegion { lon: f64, lat: f64 },

    #[error("region bounds are empty or not finite")]
    InvalidRegion,

    #[error("only {distinct} distinct points available for {requested} clusters")]
    DegenerateInput { distinct: usize, requested: usize },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invariant violated at step {step}: {message}")]
    Invariant { step: u64, message: String },

    #[error("gini coefficient of an empty income list")]
    EmptyIncomes,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
