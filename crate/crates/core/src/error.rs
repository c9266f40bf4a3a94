use crate::event::{Diverged, Site};

/// Errors raised by the lattice models.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("site ({}, {}) is outside the {width}x{height} grid", site.x, site.y)]
    OutOfBounds { site: Site, width: usize, height: usize },
    #[error("invalid input: {0}")]
    Domain(String),
    #[error(transparent)]
    Diverged(#[from] Diverged),
}

/// Errors reading a grid snapshot back from text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("snapshot line {line}: {message}")]
pub struct SnapshotError {
    pub line: usize,
    pub message: String,
}

impl SnapshotError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}
