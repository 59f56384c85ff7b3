use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value` or `[section]`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: key `{key}` appears twice in [{section}]")]
    Duplicate { line: usize, section: String, key: String },
    #[error("line {line}: `{key}` outside of any section")]
    NoSection { line: usize, key: String },
    #[error("invalid value {value:?} for `{key}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("grid size {key} = {value} must be even and at least 4")]
    Grid { key: &'static str, value: usize },
    #[error("barrier function rejected: {0}")]
    Barrier(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic bytes {found:?}; expected \"TAFv1\\0\"")]
    Magic { found: Vec<u8> },
    #[error("truncated checkpoint: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("checkpoint has {extra} trailing bytes beyond the expected {expected}")]
    Trailing { expected: u64, extra: u64 },
    #[error("checkpoint grid {found:?} does not match configured grid {expected:?}")]
    Dims { expected: [u32; 3], found: [u32; 3] },
    #[error("checkpoint content rejected: {0}")]
    Model(#[from] taf_core::Error),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{source}{}", .checkpoint.as_ref().map(|p| format!(" (last good state saved to {})", p.display())).unwrap_or_default())]
    Abort {
        source: taf_core::Error,
        checkpoint: Option<PathBuf>,
    },
    #[error("solver error: {0}")]
    Solver(taf_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 0 ok, 1 I/O or other failure, 2 configuration error, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Abort { .. } => 3,
            CliError::Solver(taf_core::Error::Parameter(_)) => 2,
            CliError::Solver(_) => 3,
            CliError::Checkpoint(CheckpointError::Dims { .. }) => 2,
            CliError::Checkpoint(_) | CliError::Io { .. } | CliError::Json(_) => 1,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
