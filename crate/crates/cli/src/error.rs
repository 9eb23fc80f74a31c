use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] lkd::Error),

    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Core(lkd::Error::Numeric(_)) | CliError::Check(_) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_VALIDATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.code() {
            EXIT_USAGE => "usage",
            EXIT_NUMERIC => "numeric",
            _ => "validation",
        }
    }
}

/// The single-line JSON record written to stderr on failure.
pub fn error_line(kind: &str, code: i32, message: &str) -> String {
    serde_json::json!({ "error": kind, "code": code, "message": message }).to_string()
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(lkd::Error::Io(e))
    }
}
