use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    ConfigParse { path: PathBuf, source: toml::de::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(#[from] tritrain::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 runtime, 3 config, 4 I/O, 5 verification; 2 is left to clap.
    pub fn exit_code(&self) -> i32 {
        use tritrain::Error as E;
        match self {
            CliError::Config(_) | CliError::ConfigParse { .. } => 3,
            CliError::ConfigRead { .. } | CliError::Io { .. } => 4,
            CliError::Verification(_) => 5,
            CliError::Core(e) => match e {
                E::Config(_) => 3,
                E::Io(_) | E::Csv(_) | E::Json(_) | E::Parse { .. } | E::Checkpoint(_) => 4,
                _ => 1,
            },
        }
    }
}
