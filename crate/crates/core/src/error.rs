use thiserror::Error;

/// Errors surfaced by the library. Parse errors carry the offending line,
/// numeric errors carry enough context to locate the failing stage.
#[derive(Debug, Error)]
pub enum MlcsError {
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("node id {id} out of range for declared node count {n}")]
    NodeOutOfRange { id: usize, n: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MlcsError>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, MlcsError>;

impl MlcsError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        MlcsError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        MlcsError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
