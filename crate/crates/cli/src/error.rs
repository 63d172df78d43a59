use std::path::PathBuf;

use aadladmm_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line}, column {column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },
    #[error("training diverged: {0}")]
    Divergence(CoreError),
    #[error("{0}")]
    Core(CoreError),
    #[error("{0} invariant check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    /// 0 success, 1 failed verification, 2 bad configuration or input, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Divergence(_) => 3,
            CliError::Config(_) | CliError::Io { .. } | CliError::Parse { .. } | CliError::Core(_) => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ObjectiveDiverged { .. }
            | CoreError::Divergence { .. }
            | CoreError::NonFinite(_)
            | CoreError::NumericalBreakdown(_) => CliError::Divergence(e),
            other => CliError::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
