use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("scorer handshake failed: {0}")]
    Handshake(String),
    #[error("failure budget exceeded: {failed} of {total} items failed (limit {limit})")]
    FailureBudget { failed: usize, total: usize, limit: f64 },
    #[error("{0}")]
    Other(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Handshake(_) => 3,
            CliError::FailureBudget { .. } => 4,
            CliError::Other(_) | CliError::Io(_) => 1,
        }
    }

    pub fn other(e: impl std::fmt::Display) -> Self {
        CliError::Other(e.to_string())
    }
}
