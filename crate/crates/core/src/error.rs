use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),

    #[error("invalid filter order {0}: must be at least 1")]
    InvalidOrder(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(&'static str),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid peaks: {0}")]
    InvalidPeaks(String),

    #[error("schema error in {path}: missing column `{column}`")]
    Schema { path: PathBuf, column: String },

    #[error("no valid rows in {0}")]
    EmptyFile(PathBuf),

    #[error("no muscle activity detected: {0}")]
    NoActivity(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("divergence in `{param}`: non-finite gradient")]
    NonFiniteGradient { param: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("stream state error: {0}")]
    State(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
