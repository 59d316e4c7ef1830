use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] metagrad::Error),

    #[error("tolerance breach: {0}")]
    Tolerance(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// 0 success, 1 I/O, 2 configuration, 3 numerical failure, 4 tolerance
    /// breach.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(metagrad::Error::Io(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Tolerance(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}
