use std::fmt;

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file or flag values: exit 1.
    Usage(String),
    /// Anything that went wrong while running: exit 2.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ipiqa::Error> for CliError {
    fn from(e: ipiqa::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

/// Invalid configuration values count as usage errors.
pub fn usage(e: ipiqa::Error) -> CliError {
    CliError::Usage(e.to_string())
}
