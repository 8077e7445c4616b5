use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("incomplete window: expected {expected} steps, got {got}")]
    Window { expected: usize, got: usize },

    #[error("rollout diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("training diverged at optimizer step {step}: non-finite {what} in block `{block}`")]
    TrainingDiverged {
        step: u64,
        block: String,
        what: &'static str,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("ordering error at row {row}: {detail}")]
    Ordering { row: usize, detail: String },

    #[error("data error at row {row}: {detail}")]
    Data { row: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
