use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine {
        file: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("empty training split")]
    EmptyTrainingSplit,

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called on a node that is not a traced scalar")]
    UntracedLoss,

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss became non-finite at epoch {epoch}, step {step}; largest parameter norm: {parameter} = {norm:e}")]
    Diverged {
        epoch: usize,
        step: usize,
        parameter: String,
        norm: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint/request mismatch: {0}")]
    ConfigMismatch(String),

    #[error("path of length {len} cannot be packed for {relations} relations")]
    PathKeyOverflow { len: usize, relations: usize },

    #[error("empty evaluation split")]
    EmptySplit,
}

pub type Result<T> = std::result::Result<T, Error>;
