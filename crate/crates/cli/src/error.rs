use std::fmt;

/// CLI failure, classified for the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    /// Output directory already in use by another run.
    Locked(String),
    Integrity(String),
    Core(echolab::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Locked(_) => 2,
            CliError::Integrity(_) => 3,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(e) if e.is_numeric_error() => 4,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Locked(m) => write!(f, "output directory locked: {m}"),
            CliError::Integrity(m) => write!(f, "integrity error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<echolab::Error> for CliError {
    fn from(e: echolab::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
