use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("lineage check failed: {0}")]
    Lineage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] dmsrec_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) | CliError::Core(dmsrec_core::Error::Config(_)) => 2,
            CliError::Lineage(_) => 3,
            CliError::Runtime(_) | CliError::Core(_) => 4,
        })
    }
}

pub fn io(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Core(dmsrec_core::Error::io(path, e))
}

pub type CliResult<T> = Result<T, CliError>;
