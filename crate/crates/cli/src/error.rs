use thiserror::Error;

/// Failure of one CLI invocation, carrying its exit code class.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable input, malformed file or invalid configuration.
    #[error("{0}")]
    Parse(String),
    #[error("validation failed:\n{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("judge failure: {0}")]
    Judge(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
            CliError::Judge(_) => 5,
        }
    }
}

impl From<cogdiag::Error> for CliError {
    fn from(e: cogdiag::Error) -> Self {
        use cogdiag::Error as E;
        match e {
            E::Parse { .. } | E::Io { .. } => CliError::Parse(e.to_string()),
            E::InvalidDataset(..) | E::NoForgetConcepts | E::UnknownStudent(_) => {
                CliError::Validation(e.to_string())
            }
            E::Judge(_) => CliError::Judge(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
