//! Per-object completion logging.
//!
//! Three mechanisms decide how many log files exist:
//!
//! * [`LoggerMechanism::File`]: one `<file_id>.ftl` per file in flight.
//! * [`LoggerMechanism::Transaction`]: files grouped by `file_id / transaction_size`
//!   into `txn_<g>.ftl`, each file owning a fixed region described by `txn_<g>.idx`.
//! * [`LoggerMechanism::Universal`]: a single `universal.ftl` + `universal.idx`.
//!
//! Six [`LogMethod`]s decide how a completed block is written. Logs are created
//! lazily on a file's first completion and removed once the file is finished.

mod completed;
pub mod encoding;
pub mod index;
mod logger;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use completed::CompletedSet;
pub use encoding::{bit_position, encode_record, LogMethod, RecordUpdate};
pub use index::IndexEntry;
pub use logger::{load_completed, load_log, FtLogger};

use crate::error::{Error, Result};

/// Directory name under the configured home.
pub const FT_DIR_NAME: &str = ".ftlads";

pub const DEFAULT_TRANSACTION_SIZE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoggerMechanism {
    File,
    #[serde(rename = "txn")]
    Transaction,
    Universal,
}

impl LoggerMechanism {
    pub const ALL: [LoggerMechanism; 3] = [
        LoggerMechanism::File,
        LoggerMechanism::Transaction,
        LoggerMechanism::Universal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LoggerMechanism::File => "file",
            LoggerMechanism::Transaction => "txn",
            LoggerMechanism::Universal => "universal",
        }
    }
}

impl fmt::Display for LoggerMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LoggerMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LoggerMechanism::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown logger mechanism {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtLogConfig {
    pub mechanism: LoggerMechanism,
    pub method: LogMethod,
    /// Files per transaction log.
    pub transaction_size: u64,
    pub ft_dir: PathBuf,
    /// Sync each record to disk before acknowledging it.
    pub fsync: bool,
}

impl FtLogConfig {
    pub fn new(mechanism: LoggerMechanism, method: LogMethod, ft_dir: impl Into<PathBuf>) -> Self {
        FtLogConfig {
            mechanism,
            method,
            transaction_size: DEFAULT_TRANSACTION_SIZE,
            ft_dir: ft_dir.into(),
            fsync: true,
        }
    }

    /// `<home>/.ftlads`
    pub fn default_dir(home: &Path) -> PathBuf {
        home.join(FT_DIR_NAME)
    }

    pub fn validate(&self) -> Result<()> {
        if self.transaction_size == 0 {
            return Err(Error::Config("transaction size must be at least 1".into()));
        }
        Ok(())
    }

    /// Shared log group of a file; `None` under the file mechanism.
    pub fn group_of(&self, file_id: u32) -> Option<String> {
        match self.mechanism {
            LoggerMechanism::File => None,
            LoggerMechanism::Transaction => {
                Some(format!("txn_{}", u64::from(file_id) / self.transaction_size))
            }
            LoggerMechanism::Universal => Some("universal".to_string()),
        }
    }

    pub fn file_log_path(&self, file_id: u32) -> PathBuf {
        self.ft_dir.join(format!("{file_id}.ftl"))
    }
}

/// Total size of all `.ftl` and `.idx` files in `ft_dir`. A missing directory counts as empty.
pub fn measure_log_space(ft_dir: &Path) -> Result<u64> {
    let rd = match fs::read_dir(ft_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(Error::io_at(ft_dir, e)),
    };
    let mut total = 0;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io_at(ft_dir, e))?;
        let path = entry.path();
        let counted = matches!(path.extension().and_then(|e| e.to_str()), Some("ftl" | "idx"));
        if counted {
            match entry.metadata() {
                Ok(md) if md.is_file() => total += md.len(),
                Ok(_) => {}
                // Removed between listing and stat.
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io_at(&path, e)),
            }
        }
    }
    Ok(total)
}
