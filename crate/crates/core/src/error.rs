use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid dataset: {0} violation(s), first: {1}")]
    InvalidDataset(usize, String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("catalog has no forget concepts")]
    NoForgetConcepts,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: non-finite loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unknown student `{0}`")]
    UnknownStudent(String),

    #[error("judge transport failure: {0}")]
    Judge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
