use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("I/O error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("empty dataset: no regular files under {0}")]
    EmptyDataset(PathBuf),

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("block {block} out of range for file {file_id} ({count} objects)")]
    BlockOutOfRange { file_id: u32, block: u64, count: u64 },

    #[error("OST {0} released while not held")]
    NotHeld(u32),

    #[error("unknown message type {0:#04x}")]
    UnknownMessageType(u8),

    #[error("truncated frame: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("payload length mismatch for {kind}: header says {declared}, layout needs {expected}")]
    LengthMismatch {
        kind: &'static str,
        declared: usize,
        expected: usize,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("connection lost: {0}")]
    ConnectionLost(String),

    #[error("block {block} of file {file_id} failed to write {attempts} times")]
    RetriesExhausted {
        file_id: u32,
        block: u64,
        attempts: u32,
    },

    #[error("block index {0} does not fit the 32-bit binary record")]
    RecordRange(u64),

    #[error("log corrupted at {path}: {detail}")]
    LogCorrupted { path: PathBuf, detail: String },

    #[error("log directory {path} is not usable: {source}")]
    LogDir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("dataset changed since fault (manifest checksum {found} != recorded {recorded})")]
    DatasetChanged { recorded: String, found: String },

    #[error("resume configuration mismatch: {0}")]
    ResumeMismatch(String),

    #[error("log directory {0} holds an unfinished session; resume it or clear the directory")]
    PendingSession(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient disk space: need {needed} bytes, {available} available")]
    InsufficientSpace { needed: u64, available: u64 },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupted(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::LogCorrupted {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// True for wire-level failures: framing, unknown types, unexpected messages.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            Error::UnknownMessageType(_)
                | Error::Truncated { .. }
                | Error::LengthMismatch { .. }
                | Error::Protocol(_)
                | Error::ConnectionLost(_)
                | Error::RetriesExhausted { .. }
        )
    }
}
