use std::fmt;
use std::process::ExitCode;

/// Command failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid input, configuration or data (exit 2).
    Input(String),
    /// A required artifact from an earlier command is absent (exit 3).
    Missing(String),
    /// Training or scoring produced no finite result (exit 4).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Input(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Numeric(_) => 4,
        })
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{what}: {m}")),
            CliError::Missing(m) => CliError::Missing(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Missing(m) => write!(f, "missing artifact: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<tabmoe::Error> for CliError {
    fn from(e: tabmoe::Error) -> Self {
        match &e {
            tabmoe::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            tabmoe::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::Missing(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
