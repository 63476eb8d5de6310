use std::path::PathBuf;
use std::process::ExitCode;

/// Errors surfaced by the CLI and its supporting modules. Exit codes:
/// 2 for configuration problems, 3 for data problems, 4 for numeric
/// divergence, 1 for anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pmsdiff_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at byte {offset} of {path}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("bad json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Core(pmsdiff_core::Error::Config(_)) => ExitCode::from(2),
            CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::Json { .. }
            | CliError::Data(_)
            | CliError::Generation(_) => ExitCode::from(3),
            CliError::Diverged { .. } => ExitCode::from(4),
            CliError::Core(_) => ExitCode::from(1),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
