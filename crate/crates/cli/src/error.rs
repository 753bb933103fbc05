use std::path::{Path, PathBuf};

use dice_core::DiceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A config problem. Line 0 means a default or command-line value.
    #[error("{}", config_message(.file.as_deref(), *.line, .message))]
    Config { file: Option<PathBuf>, line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}:{line}: {message}", .path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error(transparent)]
    Core(#[from] DiceError),
}

fn config_message(file: Option<&Path>, line: usize, message: &str) -> String {
    match (file, line) {
        (Some(f), l) if l > 0 => format!("{}: line {l}: {message}", f.display()),
        (None, l) if l > 0 => format!("line {l}: {message}"),
        (Some(f), _) => format!("{}: {message}", f.display()),
        (None, _) => message.to_string(),
    }
}

impl CliError {
    pub fn config(line: usize, message: impl Into<String>) -> Self {
        CliError::Config { file: None, line, message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn in_file(self, path: &Path) -> Self {
        match self {
            CliError::Config { line, message, .. } => {
                CliError::Config { file: Some(path.to_path_buf()), line, message }
            }
            other => other,
        }
    }

    /// 1 for problems with the user's input, 2 for numerical or internal
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                DiceError::ShapeMismatch { .. }
                | DiceError::InvalidArgument(_)
                | DiceError::BatchTooSmall(_)
                | DiceError::Checkpoint(_)
                | DiceError::Io(_) => 1,
                _ => 2,
            },
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
