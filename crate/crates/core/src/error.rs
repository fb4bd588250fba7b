use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),

    #[error("topology error at line {line}: {msg}")]
    Topology { line: usize, msg: String },

    #[error("layer `{layer}`: {msg}")]
    Simulation { layer: String, msg: String },

    #[error("working set underflow: cycle {cycle} needs {needed} bytes but the buffer holds {capacity}")]
    WorkingSetUnderflow {
        cycle: u64,
        needed: u64,
        capacity: u64,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed trace: {msg}")]
    Trace { path: PathBuf, msg: String },
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn sim(layer: impl Into<String>, msg: impl Into<String>) -> Self {
        SimError::Simulation {
            layer: layer.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 10,
            SimError::Topology { .. } => 11,
            SimError::Simulation { .. } | SimError::WorkingSetUnderflow { .. } => 12,
            SimError::Io { .. } | SimError::Trace { .. } => 13,
            SimError::Invalid(_) => 14,
        }
    }
}
