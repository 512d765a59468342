//! Resuming an interrupted transfer.
//!
//! A session record (`session.json` in the log directory) pins the dataset
//! manifest and logging configuration of a transfer until it completes. On
//! resume every file is classified from the sink's skip flag and whatever log
//! survived, and only the blocks not yet recorded are sent again.

use std::fs::{self, File};
use std::io::{ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ftlog::{CompletedSet, FtLogConfig, LogMethod, LoggerMechanism};
use crate::layout::DatasetManifest;
use crate::transport::sink::partial_marker;

pub const SESSION_FILE: &str = "session.json";

/// What the source still owes the sink for one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileStatus {
    /// Already at the sink; nothing to send.
    Complete,
    /// Some blocks are recorded as durable; the rest must be sent.
    Partial(CompletedSet),
    /// Send every block.
    Untouched,
}

/// Decides a file's status from the sink's skip flag and its surviving log, if any.
///
/// A log always wins over the skip flag: the flag only compares size and
/// mtime, while a log proves the file was still in flight.
pub fn classify(skip: bool, log: Option<CompletedSet>) -> FileStatus {
    match (skip, log) {
        (true, None) => FileStatus::Complete,
        (skip, Some(done)) => {
            if skip {
                log::warn!("sink reports a complete file that still has a log; resending its missing blocks");
            }
            FileStatus::Partial(done)
        }
        (false, None) => FileStatus::Untouched,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: u64,
    pub manifest_checksum: String,
    pub mechanism: LoggerMechanism,
    pub method: LogMethod,
    pub transaction_size: u64,
    pub object_size: u64,
}

impl SessionRecord {
    pub fn new(session_id: u64, manifest: &DatasetManifest, ft: &FtLogConfig) -> Result<Self> {
        Ok(SessionRecord {
            session_id,
            manifest_checksum: manifest.checksum()?,
            mechanism: ft.mechanism,
            method: ft.method,
            transaction_size: ft.transaction_size,
            object_size: manifest.object_size,
        })
    }

    /// Names the first configuration field that differs, if any.
    fn config_difference(&self, other: &SessionRecord) -> Option<String> {
        if self.mechanism != other.mechanism {
            return Some(format!("logger mechanism {} (recorded {})", other.mechanism, self.mechanism));
        }
        if self.method != other.method {
            return Some(format!("log method {} (recorded {})", other.method, self.method));
        }
        if self.mechanism == LoggerMechanism::Transaction && self.transaction_size != other.transaction_size {
            return Some(format!(
                "transaction size {} (recorded {})",
                other.transaction_size, self.transaction_size
            ));
        }
        if self.object_size != other.object_size {
            return Some(format!("object size {} (recorded {})", other.object_size, self.object_size));
        }
        None
    }
}

pub fn session_path(ft_dir: &Path) -> PathBuf {
    ft_dir.join(SESSION_FILE)
}

pub fn read_session(ft_dir: &Path) -> Result<Option<SessionRecord>> {
    let path = session_path(ft_dir);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::corrupted(&path, e.to_string())),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io_at(&path, e)),
    }
}

pub fn write_session(ft_dir: &Path, record: &SessionRecord) -> Result<()> {
    fs::create_dir_all(ft_dir).map_err(|e| Error::io_at(ft_dir, e))?;
    let path = session_path(ft_dir);
    let tmp = ft_dir.join(format!("{SESSION_FILE}.tmp"));
    let mut f = File::create(&tmp).map_err(|e| Error::io_at(&tmp, e))?;
    let mut body = serde_json::to_vec_pretty(record)?;
    body.push(b'\n');
    f.write_all(&body).map_err(|e| Error::io_at(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io_at(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io_at(&path, e))
}

/// Removes the session record after a completed transfer.
pub fn finish_session(ft_dir: &Path) -> Result<()> {
    let path = session_path(ft_dir);
    match fs::remove_file(&path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io_at(&path, e)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionStart {
    Fresh(SessionRecord),
    Resumed(SessionRecord),
}

impl SessionStart {
    pub fn record(&self) -> &SessionRecord {
        match self {
            SessionStart::Fresh(r) | SessionStart::Resumed(r) => r,
        }
    }

    pub fn is_resume(&self) -> bool {
        matches!(self, SessionStart::Resumed(_))
    }
}

/// Opens or resumes the session for `manifest` under `ft`.
///
/// * a pending session without `resume` is refused ([`Error::PendingSession`]);
/// * resuming against a different manifest fails with [`Error::DatasetChanged`],
///   and against a different logging configuration with [`Error::ResumeMismatch`];
/// * `resume` with nothing pending starts fresh.
///
/// A fresh start removes stray logs left in the directory without a session record.
pub fn begin_session(ft: &FtLogConfig, manifest: &DatasetManifest, resume: bool, new_id: u64) -> Result<SessionStart> {
    let wanted = SessionRecord::new(new_id, manifest, ft)?;
    match pending_session(ft, &wanted, resume)? {
        Some(prev) => {
            log::info!("resuming session {:016x}", prev.session_id);
            Ok(SessionStart::Resumed(prev))
        }
        None => {
            if resume {
                log::info!("no interrupted session in {}; starting fresh", ft.ft_dir.display());
            }
            remove_stray_logs(&ft.ft_dir)?;
            write_session(&ft.ft_dir, &wanted)?;
            Ok(SessionStart::Fresh(wanted))
        }
    }
}

/// Checks, without touching the directory, that [`begin_session`] would succeed.
pub fn check_session(ft: &FtLogConfig, manifest: &DatasetManifest, resume: bool) -> Result<()> {
    pending_session(ft, &SessionRecord::new(0, manifest, ft)?, resume).map(drop)
}

fn pending_session(ft: &FtLogConfig, wanted: &SessionRecord, resume: bool) -> Result<Option<SessionRecord>> {
    match read_session(&ft.ft_dir)? {
        Some(_) if !resume => Err(Error::PendingSession(ft.ft_dir.clone())),
        Some(prev) => {
            if prev.manifest_checksum != wanted.manifest_checksum {
                return Err(Error::DatasetChanged {
                    recorded: prev.manifest_checksum,
                    found: wanted.manifest_checksum.clone(),
                });
            }
            if let Some(diff) = prev.config_difference(wanted) {
                return Err(Error::ResumeMismatch(diff));
            }
            Ok(Some(prev))
        }
        None => Ok(None),
    }
}

fn remove_stray_logs(ft_dir: &Path) -> Result<()> {
    let rd = match fs::read_dir(ft_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io_at(ft_dir, e)),
    };
    for entry in rd {
        let path = entry.map_err(|e| Error::io_at(ft_dir, e))?.path();
        if matches!(path.extension().and_then(|e| e.to_str()), Some("ftl" | "idx")) {
            log::warn!("removing stray log {}", path.display());
            fs::remove_file(&path).map_err(|e| Error::io_at(&path, e))?;
        }
    }
    Ok(())
}

pub type Digest256 = [u8; 32];

pub fn file_digest(path: &Path) -> Result<Digest256> {
    let mut f = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io_at(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().into())
}

/// Digests of every source file, indexed by file id.
pub fn source_digests(manifest: &DatasetManifest) -> Result<Vec<Digest256>> {
    manifest
        .files
        .iter()
        .map(|f| file_digest(&manifest.source_path(f)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MismatchKind {
    Missing,
    SizeDiffers,
    DigestDiffers,
    /// The destination still carries its in-progress marker.
    PartialMarker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub path: String,
    pub kind: MismatchKind,
}

/// Compares every manifest file with its copy under `dest_root`.
///
/// `digests` may carry precomputed source digests (see [`source_digests`]).
pub fn verify_dataset(manifest: &DatasetManifest, dest_root: &Path, digests: Option<&[Digest256]>) -> Result<Vec<Mismatch>> {
    let mut out = Vec::new();
    for f in &manifest.files {
        let dest = dest_root.join(&f.path);
        let kind = match fs::metadata(&dest) {
            Err(e) if e.kind() == ErrorKind::NotFound => Some(MismatchKind::Missing),
            Err(e) => return Err(Error::io_at(&dest, e)),
            Ok(md) if md.len() != f.size => Some(MismatchKind::SizeDiffers),
            Ok(_) if partial_marker(&dest).exists() => Some(MismatchKind::PartialMarker),
            Ok(_) => {
                let want = match digests {
                    Some(d) => d[f.file_id as usize],
                    None => file_digest(&manifest.source_path(f))?,
                };
                (file_digest(&dest)? != want).then_some(MismatchKind::DigestDiffers)
            }
        };
        if let Some(kind) = kind {
            out.push(Mismatch {
                path: f.path.clone(),
                kind,
            });
        }
    }
    Ok(out)
}
