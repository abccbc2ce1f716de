use std::fmt;
use std::process::ExitCode;

/// Usage errors exit with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

// Core messages already embed their cause, so the source chain would repeat it.
impl From<mosfuse_core::Error> for CliError {
    fn from(e: mosfuse_core::Error) -> Self {
        CliError::Runtime(anyhow::anyhow!(e.to_string()))
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
