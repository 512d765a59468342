//! Receiving endpoint.
//!
//! The connection thread parses frames and lands block data in pool slots;
//! write workers put each block at `block_index * object_size` and answer with
//! BLOCK_SYNC. A file being written carries a `<name>.ftpart` marker next to
//! it until its FILE_CLOSE, so an interrupted file is never mistaken for a
//! finished one.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpListener};
use std::os::fd::AsRawFd;
use std::os::unix::fs::FileExt;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, UNIX_EPOCH};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::conn::Connection;
use super::pool::{BufferPool, Slot};
use super::wire::{self, MessageKind, SyncStatus, TransferMessage};
use super::Outcome;
use crate::error::{Error, Result};

pub const PARTIAL_SUFFIX: &str = ".ftpart";

pub const DEFAULT_SINK_SLOTS: usize = 256;
pub const DEFAULT_WRITE_WORKERS: usize = 4;

/// Marker path for a destination file.
pub fn partial_marker(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(PARTIAL_SUFFIX);
    path.with_file_name(name)
}

/// Test instrumentation.
#[derive(Debug, Clone, Default)]
pub struct SinkHooks {
    /// `(file_id, block) -> n`: the next `n` writes of that block report failure.
    pub fail_writes: Arc<Mutex<HashMap<(u32, u64), u32>>>,
    /// Every successful write, in completion order.
    pub journal: Option<Arc<Mutex<Vec<(u32, u64)>>>>,
}

impl SinkHooks {
    pub fn fail_block(&self, file_id: u32, block: u64, times: u32) {
        self.fail_writes.lock().unwrap().insert((file_id, block), times);
    }

    pub fn with_journal(mut self) -> Self {
        self.journal = Some(Arc::default());
        self
    }

    pub fn journal(&self) -> Vec<(u32, u64)> {
        self.journal
            .as_ref()
            .map(|j| j.lock().unwrap().clone())
            .unwrap_or_default()
    }

    fn should_fail(&self, file_id: u32, block: u64) -> bool {
        let mut m = self.fail_writes.lock().unwrap();
        match m.get_mut(&(file_id, block)) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkConfig {
    pub dest_root: PathBuf,
    pub slot_count: usize,
    pub write_workers: usize,
    /// fdatasync every block before acknowledging it.
    pub sync_writes: bool,
    pub hooks: SinkHooks,
}

impl SinkConfig {
    pub fn new(dest_root: impl Into<PathBuf>) -> Self {
        SinkConfig {
            dest_root: dest_root.into(),
            slot_count: DEFAULT_SINK_SLOTS,
            write_workers: DEFAULT_WRITE_WORKERS,
            sync_writes: false,
            hooks: SinkHooks::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SinkReport {
    pub outcome: Option<Outcome>,
    pub session_id: u64,
    pub resume: bool,
    pub blocks_written: u64,
    pub bytes_written: u64,
    pub write_failures: u64,
    pub files_opened: u64,
    pub files_skipped: u64,
    pub files_closed: u64,
    pub pool_peak: usize,
}

struct SinkFile {
    path: PathBuf,
    size: u64,
    mtime: u64,
    handle: Option<Arc<File>>,
}

impl SinkFile {
    fn open(&mut self) -> Result<Arc<File>> {
        if let Some(h) = &self.handle {
            return Ok(Arc::clone(h));
        }
        let f = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(false)
            .open(&self.path)
            .map_err(|e| Error::io_at(&self.path, e))?;
        let f = Arc::new(f);
        self.handle = Some(Arc::clone(&f));
        Ok(f)
    }
}

struct WriteJob {
    file: Arc<File>,
    file_id: u32,
    block_index: u64,
    offset: u64,
    slot: Slot,
}

#[derive(Default)]
struct WriteCounters {
    blocks: u64,
    bytes: u64,
    failures: u64,
}

fn checked_dest(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    let ok = !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    if !ok {
        return Err(Error::Protocol(format!("refusing destination path {rel:?}")));
    }
    Ok(root.join(p))
}

fn mtime_secs(md: &fs::Metadata) -> Option<u64> {
    md.modified()
        .ok()?
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

/// Accepts and serves sessions one after another; `sessions` bounds how many.
pub fn serve(listener: &TcpListener, config: &SinkConfig, sessions: Option<usize>) -> Result<Vec<SinkReport>> {
    let mut reports = Vec::new();
    while sessions.is_none_or(|n| reports.len() < n) {
        let (stream, peer) = listener.accept()?;
        log::info!("session from {peer}");
        let report = serve_session(Connection::from_tcp(stream)?, config)?;
        log::info!("session {} ended: {:?}", report.session_id, report.outcome);
        reports.push(report);
    }
    Ok(reports)
}

/// Runs one session to BYE or disconnect.
///
/// A connection that drops (at a frame boundary or mid-frame) ends the session
/// as [`Outcome::Aborted`]; malformed frames are returned as protocol errors.
pub fn serve_session(conn: Connection, config: &SinkConfig) -> Result<SinkReport> {
    let write_half = conn.try_clone()?;
    let mut reader = BufReader::with_capacity(256 * 1024, conn);

    let (object_size, session_id, resume) = match wire::read_message(&mut reader)? {
        Some(TransferMessage::Connect {
            object_size,
            session_id,
            resume,
            ..
        }) => (object_size, session_id, resume),
        Some(other) => {
            return Err(Error::Protocol(format!("expected CONNECT, got {}", other.kind())));
        }
        None => {
            return Ok(SinkReport {
                outcome: Some(Outcome::Aborted),
                ..SinkReport::default()
            })
        }
    };
    if object_size == 0 || object_size > u32::MAX as u64 {
        return Err(Error::Protocol(format!("unusable object size {object_size}")));
    }
    fs::create_dir_all(&config.dest_root).map_err(|e| Error::io_at(&config.dest_root, e))?;

    let pool = BufferPool::new(object_size as usize, config.slot_count.max(1));
    let (out_tx, out_rx) = unbounded::<TransferMessage>();
    let writer = spawn_writer(write_half, out_rx);
    out_tx
        .send(TransferMessage::Connect {
            object_size,
            slot_count: config.slot_count as u32,
            session_id,
            resume,
        })
        .ok();

    let counters = Arc::new(Mutex::new(WriteCounters::default()));
    let (job_tx, job_rx) = unbounded::<WriteJob>();
    let workers: Vec<_> = (0..config.write_workers.max(1))
        .map(|i| {
            let rx = job_rx.clone();
            let out = out_tx.clone();
            let counters = Arc::clone(&counters);
            let hooks = config.hooks.clone();
            let sync = config.sync_writes;
            thread::Builder::new()
                .name(format!("sink-write-{i}"))
                .spawn(move || write_worker(rx, out, counters, hooks, sync))
                .expect("spawn write worker")
        })
        .collect();
    drop(job_rx);

    let mut report = SinkReport {
        session_id,
        resume,
        ..SinkReport::default()
    };
    let mut files: HashMap<u32, SinkFile> = HashMap::new();
    let mut closed: HashSet<u32> = HashSet::new();

    let result = (|| -> Result<Outcome> {
        loop {
            let header = match wire::read_header(&mut reader) {
                Ok(Some(h)) => h,
                Ok(None) => return Ok(Outcome::Aborted),
                Err(Error::Truncated { .. } | Error::ConnectionLost(_)) => return Ok(Outcome::Aborted),
                Err(e) => return Err(e),
            };
            if header.kind == MessageKind::NewBlock {
                let prefix = match wire::read_block_prefix(&mut reader, header) {
                    Ok(p) => p,
                    Err(Error::Truncated { .. } | Error::ConnectionLost(_)) => return Ok(Outcome::Aborted),
                    Err(e) => return Err(e),
                };
                let entry = files.get_mut(&prefix.file_id).ok_or_else(|| {
                    Error::Protocol(format!("NEW_BLOCK for unknown file {}", prefix.file_id))
                })?;
                let offset = prefix.block_index.checked_mul(object_size).unwrap_or(u64::MAX);
                if prefix.length as u64 > object_size
                    || offset.saturating_add(prefix.length as u64) > entry.size
                {
                    return Err(Error::Protocol(format!(
                        "block {} of file {} ({} bytes) lies outside the file",
                        prefix.block_index, prefix.file_id, prefix.length
                    )));
                }
                let file = entry.open()?;
                let Some(mut slot) = pool.reserve() else {
                    return Ok(Outcome::Aborted);
                };
                slot.set_len(prefix.length);
                match wire::read_block_data(&mut reader, &mut slot) {
                    Ok(()) => {}
                    Err(Error::Truncated { .. } | Error::ConnectionLost(_)) => return Ok(Outcome::Aborted),
                    Err(e) => return Err(e),
                }
                job_tx
                    .send(WriteJob {
                        file,
                        file_id: prefix.file_id,
                        block_index: prefix.block_index,
                        offset,
                        slot,
                    })
                    .map_err(|_| Error::Protocol("write workers gone".into()))?;
                continue;
            }
            let msg = match wire::read_payload(&mut reader, header) {
                Ok(m) => m,
                Err(Error::Truncated { .. } | Error::ConnectionLost(_)) => return Ok(Outcome::Aborted),
                Err(e) => return Err(e),
            };
            match msg {
                TransferMessage::NewFile {
                    file_id,
                    size,
                    mtime,
                    path,
                } => {
                    if files.contains_key(&file_id) || closed.contains(&file_id) {
                        return Err(Error::Protocol(format!("file id {file_id} announced twice")));
                    }
                    let dest = checked_dest(&config.dest_root, &path)?;
                    let marker = partial_marker(&dest);
                    let complete = match fs::metadata(&dest) {
                        Ok(md) => md.is_file() && md.len() == size && mtime_secs(&md) == Some(mtime) && !marker.exists(),
                        Err(_) => false,
                    };
                    let mut entry = SinkFile {
                        path: dest,
                        size,
                        mtime,
                        handle: None,
                    };
                    let sink_fd = if complete {
                        report.files_skipped += 1;
                        0
                    } else {
                        if let Some(parent) = entry.path.parent() {
                            fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
                        }
                        File::create(&marker).map_err(|e| Error::io_at(&marker, e))?;
                        let f = entry.open()?;
                        f.set_len(size).map_err(|e| Error::io_at(&entry.path, e))?;
                        report.files_opened += 1;
                        f.as_raw_fd() as u64
                    };
                    files.insert(file_id, entry);
                    out_tx
                        .send(TransferMessage::FileId {
                            file_id,
                            sink_fd,
                            skip: complete,
                        })
                        .ok();
                }
                TransferMessage::FileClose { file_id } => {
                    let mut entry = files
                        .remove(&file_id)
                        .ok_or_else(|| Error::Protocol(format!("FILE_CLOSE for unknown file {file_id}")))?;
                    let f = entry.open()?;
                    // The source only closes a file after every block is acknowledged.
                    if config.sync_writes {
                        f.sync_all().map_err(|e| Error::io_at(&entry.path, e))?;
                    }
                    f.set_modified(UNIX_EPOCH + Duration::from_secs(entry.mtime))
                        .map_err(|e| Error::io_at(&entry.path, e))?;
                    let marker = partial_marker(&entry.path);
                    match fs::remove_file(&marker) {
                        Ok(()) => {}
                        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                        Err(e) => return Err(Error::io_at(&marker, e)),
                    }
                    closed.insert(file_id);
                    report.files_closed += 1;
                }
                TransferMessage::Bye => return Ok(Outcome::Completed),
                other => {
                    return Err(Error::Protocol(format!("unexpected {} at sink", other.kind())));
                }
            }
        }
    })();

    // Let queued writes finish and their BLOCK_SYNCs go out before closing.
    drop(job_tx);
    for w in workers {
        let _ = w.join();
    }
    drop(out_tx);
    let _ = writer.join();
    let _ = reader.get_ref().shutdown(Shutdown::Both);

    let c = counters.lock().unwrap();
    report.blocks_written = c.blocks;
    report.bytes_written = c.bytes;
    report.write_failures = c.failures;
    report.pool_peak = pool.stats().peak_in_use;
    report.outcome = Some(result?);
    Ok(report)
}

fn spawn_writer(conn: Connection, rx: Receiver<TransferMessage>) -> thread::JoinHandle<()> {
    thread::Builder::new()
        .name("sink-writer".into())
        .spawn(move || {
            let mut w = BufWriter::new(conn);
            let mut broken = false;
            for msg in rx.iter() {
                if broken {
                    continue;
                }
                let r = wire::write_message(&mut w, &msg).and_then(|()| {
                    if rx.is_empty() {
                        w.flush().map_err(|e| Error::ConnectionLost(e.to_string()))
                    } else {
                        Ok(())
                    }
                });
                if let Err(e) = r {
                    log::debug!("sink writer stopped: {e}");
                    broken = true;
                }
            }
            let _ = w.flush();
        })
        .expect("spawn sink writer")
}

fn write_worker(
    rx: Receiver<WriteJob>,
    out: Sender<TransferMessage>,
    counters: Arc<Mutex<WriteCounters>>,
    hooks: SinkHooks,
    sync: bool,
) {
    for job in rx.iter() {
        let result = if hooks.should_fail(job.file_id, job.block_index) {
            Err(std::io::Error::other("injected write failure"))
        } else {
            job.file
                .write_all_at(&job.slot, job.offset)
                .and_then(|()| if sync { job.file.sync_data() } else { Ok(()) })
        };
        let status = match &result {
            Ok(()) => {
                let mut c = counters.lock().unwrap();
                c.blocks += 1;
                c.bytes += job.slot.len() as u64;
                drop(c);
                if let Some(j) = &hooks.journal {
                    j.lock().unwrap().push((job.file_id, job.block_index));
                }
                SyncStatus::Written
            }
            Err(e) => {
                log::warn!("write of file {} block {} failed: {e}", job.file_id, job.block_index);
                counters.lock().unwrap().failures += 1;
                SyncStatus::WriteFailed
            }
        };
        drop(job.slot);
        out.send(TransferMessage::BlockSync {
            file_id: job.file_id,
            block_index: job.block_index,
            status,
        })
        .ok();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn destination_paths() {
        let root = Path::new("/dst");
        assert_eq!(checked_dest(root, "a/b").unwrap(), Path::new("/dst/a/b"));
        assert!(checked_dest(root, "/etc/passwd").is_err());
        assert!(checked_dest(root, "a/../../x").is_err());
        assert!(checked_dest(root, "").is_err());
        assert_eq!(partial_marker(Path::new("/dst/a/f.dat")), Path::new("/dst/a/f.dat.ftpart"));
    }
}
