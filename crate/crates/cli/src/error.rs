use std::process::ExitCode;

use rclqr_core::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

/// Process exit statuses. The numbering is part of the public interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Exit {
    Success = 0,
    Io = 1,
    Config = 2,
    Instability = 3,
    Solver = 4,
    Dimension = 5,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("instability: {0}")]
    Unstable(String),
    #[error("reference solver failed: {0}")]
    Solver(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit(&self) -> Exit {
        match self {
            CliError::Config(_) => Exit::Config,
            CliError::Dimension(_) => Exit::Dimension,
            CliError::Unstable(_) => Exit::Instability,
            CliError::Solver(_) => Exit::Solver,
            CliError::Io { .. } => Exit::Io,
            CliError::Core(e) => match e {
                CoreError::Unstable { .. } | CoreError::Blowup { .. } | CoreError::NonFinite(_) => Exit::Instability,
                CoreError::Solver { .. } | CoreError::NoConvergence(_) => Exit::Solver,
                CoreError::Dimension(_) | CoreError::NonSquare { .. } => Exit::Dimension,
                _ => Exit::Config,
            },
        }
    }
}
