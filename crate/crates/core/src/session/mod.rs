//! Tick-driven interactive sessions: a model, running statistics and the
//! grain scheduler behind a JSON-lines protocol, with control logs that
//! replay bit for bit.

pub mod config;
pub mod log;
pub mod protocol;
mod run;

pub use config::{SessionConfig, SonifySettings};
pub use log::{LogRecord, SessionLog};
pub use protocol::{decode_message, encode_message, ByeReason, LiveStats, Message, ProtocolError, PROTOCOL_VERSION};
pub use run::{replay, run_session, ControlSource, JsonlSink, MessageSink, ScriptedControls, Session, TickOutput};

use crate::kv::KvError;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("grain corpus: {0}")]
    Corpus(String),
    #[error("session log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<KvError> for SessionError {
    fn from(e: KvError) -> Self {
        SessionError::Config(e.to_string())
    }
}
