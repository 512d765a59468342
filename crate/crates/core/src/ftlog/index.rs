//! Index files of shared logs.
//!
//! One LF-terminated line per file with an active region:
//!
//! ```text
//! transaction:  LogFileName,FileName,TotalBlocks,Offset,Data_Length
//! universal:    FileName,TotalBlocks,Offset,Data_Length
//! ```
//!
//! File names may contain commas; the numeric fields are parsed from the right.

use std::fs::{self, File};
use std::io::{ErrorKind, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    /// Present for transaction logs only.
    pub log_file_name: Option<String>,
    pub file_name: String,
    pub total_blocks: u64,
    pub offset: u64,
    pub data_length: u64,
}

impl IndexEntry {
    pub fn to_line(&self) -> String {
        let tail = format!(
            "{},{},{},{}\n",
            self.file_name, self.total_blocks, self.offset, self.data_length
        );
        match &self.log_file_name {
            Some(log) => format!("{log},{tail}"),
            None => tail,
        }
    }

    pub fn parse(line: &str, with_log_name: bool) -> Option<Self> {
        let (log_file_name, rest) = if with_log_name {
            let (log, rest) = line.split_once(',')?;
            (Some(log.to_string()), rest)
        } else {
            (None, line)
        };
        let mut fields = rest.rsplitn(4, ',');
        let data_length = fields.next()?.parse().ok()?;
        let offset = fields.next()?.parse().ok()?;
        let total_blocks = fields.next()?.parse().ok()?;
        let file_name = fields.next()?.to_string();
        Some(IndexEntry {
            log_file_name,
            file_name,
            total_blocks,
            offset,
            data_length,
        })
    }
}

/// Reads an index; a missing file yields no entries.
pub fn read_index(path: &Path, with_log_name: bool) -> Result<Vec<IndexEntry>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io_at(path, e)),
    };
    let mut entries = Vec::new();
    let mut rest = text.as_str();
    while let Some(nl) = rest.find('\n') {
        let line = &rest[..nl];
        let entry = IndexEntry::parse(line, with_log_name)
            .ok_or_else(|| Error::corrupted(path, format!("bad index line {line:?}")))?;
        entries.push(entry);
        rest = &rest[nl + 1..];
    }
    if !rest.is_empty() {
        // An entry is appended before its region is first written, so a torn
        // trailing line never describes recorded data.
        log::warn!("{}: ignoring torn index line {rest:?}", path.display());
    }
    Ok(entries)
}

/// Replaces the index atomically (temp file + rename). Returns the new size.
pub fn rewrite_index(path: &Path, entries: &[IndexEntry], fsync: bool) -> Result<u64> {
    let tmp = path.with_extension("idx.tmp");
    let body: String = entries.iter().map(IndexEntry::to_line).collect();
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io_at(&tmp, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io_at(&tmp, e))?;
        if fsync {
            f.sync_all().map_err(|e| Error::io_at(&tmp, e))?;
        }
    }
    fs::rename(&tmp, path).map_err(|e| Error::io_at(path, e))?;
    Ok(body.len() as u64)
}
