use std::path::{Path, PathBuf};

use socsim_core::kv::KvError;
use socsim_core::session::SessionError;
use socsim_core::ModelError;

/// Exit codes: 1 bad configuration or usage, 2 I/O, 3 model divergence,
/// 4 malformed input data or a failed estimate.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Diverged(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.as_ref().to_path_buf();
        move |source| CliError::Io { path, source }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged(_) => CliError::Diverged(e.to_string()),
            ModelError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(_) => CliError::Config(e.to_string()),
            SessionError::Io(source) => CliError::Io {
                path: PathBuf::from("<session>"),
                source,
            },
            SessionError::Corpus(_) | SessionError::Log { .. } => CliError::Data(e.to_string()),
        }
    }
}
