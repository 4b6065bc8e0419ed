use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum FedError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error in layer {layer}: {message}")]
    Numeric { layer: usize, message: String },

    #[error("ingestion error in {path} at byte {offset}: {message}")]
    Ingest {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<FedError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FedError {
    pub fn config(msg: impl Into<String>) -> Self {
        FedError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for structured CLI errors and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            FedError::Config(_) => "config",
            FedError::Numeric { .. } => "numeric",
            FedError::Ingest { .. } => "ingest",
            FedError::Simulation(_) => "simulation",
            FedError::Internal(_) => "internal",
            FedError::Parse { .. } => "parse",
            FedError::Round { source, .. } => source.kind(),
            FedError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, FedError>;
