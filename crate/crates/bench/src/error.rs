use serde::Serialize;

/// Harness failures, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("computation failed: {0}")]
    Compute(#[from] embedsteer::Error),
    #[error("{0} verification check(s) failed")]
    ChecksFailed(usize),
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Parse(_) => 3,
            BenchError::Validation(_) => 4,
            BenchError::Io(_) => 5,
            BenchError::Compute(_) => 6,
            BenchError::ChecksFailed(_) => 7,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Parse(_) => "parse",
            BenchError::Validation(_) => "validation",
            BenchError::Io(_) => "io",
            BenchError::Compute(_) => "compute",
            BenchError::ChecksFailed(_) => "checks_failed",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Io(std::io::Error::other(e.to_string()))
    }
}

impl From<serde_json::Error> for BenchError {
    fn from(e: serde_json::Error) -> Self {
        BenchError::Io(std::io::Error::other(e.to_string()))
    }
}
