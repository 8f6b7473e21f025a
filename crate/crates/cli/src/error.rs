use std::path::PathBuf;

use swreg_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot parse {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// Process exit code. 2 is shared with argument parsing errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Json { .. } => 3,
            CliError::Io { .. } => 4,
            CliError::ChecksFailed(_) => 7,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) | CoreError::InvalidParameter(_) => 3,
                CoreError::Io(_) => 4,
                CoreError::BadMagic { .. }
                | CoreError::UnsupportedVersion(_)
                | CoreError::UnknownKind(_)
                | CoreError::Truncated { .. }
                | CoreError::DimOverflow(_) => 5,
                _ => 6,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
