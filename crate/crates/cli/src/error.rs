use serde::Serialize;

/// CLI-level error: a stable machine-readable code plus a human message.
/// Emitted as JSON on standard error; any error exits nonzero.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config_invalid(message: impl Into<String>) -> Self {
        Self::new("CONFIG_INVALID", message)
    }

    pub fn grid_empty(message: impl Into<String>) -> Self {
        Self::new("GRID_EMPTY", message)
    }

    pub fn malformed_csv(message: impl Into<String>) -> Self {
        Self::new("MALFORMED_CSV", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new("IO_ERROR", message)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| {
            format!("{{\"code\":\"{}\",\"message\":\"(unprintable)\"}}", self.code)
        })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<tbi_core::Error> for CliError {
    fn from(err: tbi_core::Error) -> Self {
        Self::new(err.code(), err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::io(err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        Self::config_invalid(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
