use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    /// A solver or flow failed; reported as JSON on stderr.
    #[error("numerical failure in {stage}: {message}")]
    Numerical { stage: String, message: String, context: Value },
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0} acceptance criteria failed")]
    VerifyFailed(usize),
}

impl CliError {
    pub fn numerical(stage: &str, err: impl std::fmt::Display, context: Value) -> CliError {
        CliError::Numerical {
            stage: stage.to_string(),
            message: err.to_string(),
            context,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) | CliError::VerifyFailed(_) => 1,
        }
    }

    pub fn report(&self) -> String {
        match self {
            CliError::Numerical { stage, message, context } => {
                json!({ "error": "numerical", "stage": stage, "message": message, "context": context }).to_string()
            }
            other => format!("error: {other}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
