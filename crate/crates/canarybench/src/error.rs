//! Crate-wide error type.
//!
//! Variants map onto the CLI's exit codes: config errors, IO errors,
//! capability errors (a backend cannot do what was asked), and privacy
//! budget violations each get their own code so scripts can branch on them.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("privacy accounting error: {0}")]
    Accounting(String),

    #[error("privacy budget exceeded: accounted epsilon {spent:.6} > target {target:.6} at step {step}")]
    BudgetExceeded { spent: f64, target: f64, step: u64 },

    #[error("backend capability error: {0}")]
    Capability(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("missing artifact {path}: run `canarybench {producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI. Zero is success; each error family
    /// gets a distinct nonzero code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::MissingArtifact { .. } => 3,
            Error::Capability(_) | Error::Transport(_) => 4,
            Error::BudgetExceeded { .. } | Error::Accounting(_) => 5,
            _ => 1,
        }
    }
}
