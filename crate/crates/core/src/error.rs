use std::path::PathBuf;

/// Errors produced by the simulator and its analytic helpers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("apparent instability under {policy} at load {load:.4}: {in_system} jobs in system at t={time:.3}")]
    Instability {
        policy: String,
        load: f64,
        in_system: usize,
        time: f64,
    },

    #[error("policy {policy} violated the scheduling contract: {detail}")]
    PolicyViolation { policy: String, detail: String },

    #[error("{}:{line}: {msg}", path.display())]
    Swf {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
