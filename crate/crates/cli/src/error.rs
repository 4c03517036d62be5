use std::path::Path;

use thiserror::Error;

/// Broad class of a pipeline failure; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// An input file or the config is malformed or invalid.
    Parse,
    /// A stage rejected otherwise well-formed inputs.
    Stage,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Parse => 3,
            ErrorKind::Stage => 4,
            ErrorKind::Io => 5,
        }
    }
}

#[derive(Debug, Clone, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub stage: &'static str,
    pub message: String,
}

impl PipelineError {
    pub fn parse(stage: &'static str, message: impl std::fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Parse,
            stage,
            message: message.to_string(),
        }
    }

    pub fn stage(stage: &'static str, message: impl std::fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Stage,
            stage,
            message: message.to_string(),
        }
    }

    pub fn io(stage: &'static str, path: &Path, err: std::io::Error) -> Self {
        Self {
            kind: ErrorKind::Io,
            stage,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn read_text(stage: &'static str, path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(stage, path, e))
}

/// Reads `path` and parses it with `f`; parse failures name the file.
pub(crate) fn load<T, E: std::fmt::Display>(
    stage: &'static str,
    path: &Path,
    f: impl FnOnce(&str) -> std::result::Result<T, E>,
) -> Result<T> {
    let text = read_text(stage, path)?;
    f(&text).map_err(|e| PipelineError::parse(stage, format!("{}: {e}", path.display())))
}
