//! Sending endpoint.
//!
//! Threads:
//!
//! * I/O workers reserve a pool slot, claim an object from the [`TransferPlan`],
//!   read it and hand it to the writer;
//! * the writer registers each block as in flight and puts frames on the wire;
//! * the reader turns incoming frames into events;
//! * the calling thread runs the master loop: it announces files, classifies
//!   them on FILE_ID, logs every acknowledged block and closes finished files.
//!
//! A block's slot is held until its BLOCK_SYNC arrives, so at most
//! `slot_count` blocks are unacknowledged at any time.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::Shutdown;
use std::os::unix::fs::FileExt;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use serde::Serialize;

use super::conn::Connection;
use super::pool::{BufferPool, Slot};
use super::wire::{self, MessageKind, SyncStatus, TransferMessage};
use super::{Outcome, TraceEvent};
use crate::error::{Error, Result};
use crate::ftlog::{load_log, CompletedSet, FtLogConfig, FtLogger};
use crate::layout::{DatasetManifest, ObjectDescriptor, OstId};
use crate::recovery::{self, classify, FileStatus};
use crate::scheduler::TransferPlan;

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_SLOTS: usize = 256;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

/// How long to wait for the sink to hang up after the last frame.
const CLOSE_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
pub struct SourceConfig {
    pub workers: usize,
    /// Source buffer slots; bounds unacknowledged blocks.
    pub slot_count: usize,
    /// Files announced but not finished; 0 means twice the worker count.
    pub max_open_files: usize,
    /// Write failures tolerated per block before giving up.
    pub max_retries: u32,
    /// Used when no session record supplies one; random if unset.
    pub session_id: Option<u64>,
    pub resume: bool,
    /// Completion logging; `None` disables fault tolerance.
    pub ft: Option<FtLogConfig>,
    /// Simulate a crash once this fraction of the dataset's bytes is durable
    /// at the sink, counting what earlier sessions already delivered.
    pub fault_at: Option<f64>,
    pub fault_action: FaultAction,
    /// Per-object service delay for individual OSTs.
    pub congestion: Vec<(OstId, Duration)>,
    pub trace: bool,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            workers: DEFAULT_WORKERS,
            slot_count: DEFAULT_SLOTS,
            max_open_files: 0,
            max_retries: DEFAULT_MAX_RETRIES,
            session_id: None,
            resume: false,
            ft: None,
            fault_at: None,
            fault_action: FaultAction::Stop,
            congestion: Vec::new(),
            trace: false,
        }
    }
}

impl SourceConfig {
    fn open_file_limit(&self) -> usize {
        if self.max_open_files == 0 {
            2 * self.workers.max(1)
        } else {
            self.max_open_files
        }
    }
}

/// What a simulated fault does to the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    /// Stop the session's threads and return [`Outcome::Faulted`]; frames
    /// already queued still reach the sink.
    Stop,
    /// Terminate the process with this exit code on the spot.
    ExitProcess(i32),
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TransferStats {
    pub outcome: Option<Outcome>,
    pub session_id: u64,
    pub resumed: bool,
    /// From CONNECT to the sink hanging up, or to the simulated fault.
    pub seconds: f64,
    pub total_bytes: u64,
    pub total_blocks: u64,
    pub blocks_sent: u64,
    pub bytes_sent: u64,
    pub blocks_synced: u64,
    pub bytes_synced: u64,
    pub blocks_failed: u64,
    /// Files the sink already held complete.
    pub files_skipped: u64,
    /// Files continued from a surviving log.
    pub files_resumed: u64,
    /// Blocks scheduled for those files.
    pub partial_blocks_scheduled: u64,
    pub files_closed: u64,
    pub log_space_peak: u64,
    pub pool_peak: usize,
    pub messages_sent: BTreeMap<&'static str, u64>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

enum Event {
    Msg(TransferMessage),
    ReaderEnd(Result<()>),
    WriterFailed(Error),
    WorkerFailed(Error),
}

enum Outgoing {
    Msg(TransferMessage),
    Block { obj: ObjectDescriptor, slot: Slot },
}

struct InFlight {
    obj: ObjectDescriptor,
    _slot: Arc<Slot>,
}

type InFlightTable = Arc<Mutex<HashMap<(u32, u64), InFlight>>>;
type OpenFiles = Arc<RwLock<HashMap<u32, Arc<File>>>>;
type Trace = Option<Arc<Mutex<Vec<TraceEvent>>>>;

#[derive(Default)]
struct WriterStats {
    blocks: u64,
    bytes: u64,
    messages: BTreeMap<&'static str, u64>,
}

fn ids_of(m: &TransferMessage) -> (Option<u32>, Option<u64>) {
    match m {
        TransferMessage::NewFile { file_id, .. }
        | TransferMessage::FileId { file_id, .. }
        | TransferMessage::FileClose { file_id } => (Some(*file_id), None),
        TransferMessage::NewBlock {
            file_id, block_index, ..
        }
        | TransferMessage::BlockSync {
            file_id, block_index, ..
        } => (Some(*file_id), Some(*block_index)),
        TransferMessage::Connect { .. } | TransferMessage::Bye => (None, None),
    }
}

fn push_trace(trace: &Trace, ev: TraceEvent) {
    if let Some(t) = trace {
        t.lock().unwrap().push(ev);
    }
}

/// Sends `manifest` over `conn`.
///
/// With fault tolerance enabled this also opens (or resumes) the session
/// record in the log directory and removes it once the transfer completes.
/// A simulated fault returns normally with [`Outcome::Faulted`], leaving logs
/// and session record behind for a later resume.
pub fn run_source(conn: Connection, manifest: Arc<DatasetManifest>, cfg: &SourceConfig) -> Result<TransferStats> {
    let fresh_id = cfg.session_id.unwrap_or_else(rand::random);
    let (session_id, resumed, logger) = match &cfg.ft {
        Some(ft) => {
            let start = recovery::begin_session(ft, &manifest, cfg.resume, fresh_id)?;
            let logger = FtLogger::open(ft.clone())?;
            (start.record().session_id, start.is_resume(), Some(logger))
        }
        None => (fresh_id, cfg.resume, None),
    };

    let mut master = Master::start(conn, Arc::clone(&manifest), cfg, logger)?;
    master.stats.session_id = session_id;
    master.stats.resumed = resumed;
    let run = master.run(session_id, resumed);
    let stats = master.finish(run)?;
    if stats.outcome == Some(Outcome::Completed) {
        if let Some(ft) = &cfg.ft {
            recovery::finish_session(&ft.ft_dir)?;
        }
    }
    Ok(stats)
}

struct Master<'a> {
    cfg: &'a SourceConfig,
    manifest: Arc<DatasetManifest>,
    conn: Connection,
    plan: Arc<TransferPlan>,
    pool: BufferPool,
    inflight: InFlightTable,
    open_files: OpenFiles,
    trace: Trace,
    logger: Option<FtLogger>,
    events: Receiver<Event>,
    out: Option<Sender<Outgoing>>,
    workers: Vec<JoinHandle<()>>,
    writer: Option<JoinHandle<WriterStats>>,
    reader: Option<JoinHandle<()>>,
    reader_done: bool,
    started: Instant,
    stopped: Option<Instant>,
    stats: TransferStats,
    // master-loop state
    to_announce: VecDeque<u32>,
    announced: usize,
    remaining: HashMap<u32, u64>,
    retries: HashMap<(u32, u64), u32>,
    /// Bytes found durable from earlier sessions (skipped files, logged blocks).
    earlier_bytes: u64,
}

impl<'a> Master<'a> {
    fn start(conn: Connection, manifest: Arc<DatasetManifest>, cfg: &'a SourceConfig, logger: Option<FtLogger>) -> Result<Self> {
        let object_size = usize::try_from(manifest.object_size)
            .map_err(|_| Error::Config("object size too large".into()))?;
        let plan = Arc::new(TransferPlan::new(Arc::clone(&manifest)));
        for &(ost, delay) in &cfg.congestion {
            plan.set_congestion(ost, delay);
        }
        let pool = BufferPool::new(object_size, cfg.slot_count.max(1));
        let inflight: InFlightTable = Arc::default();
        let open_files: OpenFiles = Arc::default();
        let trace: Trace = cfg.trace.then(Arc::default);
        let (ev_tx, events) = unbounded();
        let (out_tx, out_rx) = unbounded();

        let reader = {
            let conn = conn.try_clone()?;
            let ev = ev_tx.clone();
            let trace = trace.clone();
            thread::Builder::new()
                .name("source-reader".into())
                .spawn(move || reader_loop(conn, ev, trace))?
        };
        let writer = {
            let conn = conn.try_clone()?;
            let ev = ev_tx.clone();
            let trace = trace.clone();
            let inflight = Arc::clone(&inflight);
            thread::Builder::new()
                .name("source-writer".into())
                .spawn(move || writer_loop(conn, out_rx, inflight, ev, trace))?
        };
        let workers = (0..cfg.workers.max(1))
            .map(|id| {
                let plan = Arc::clone(&plan);
                let pool = pool.clone();
                let files = Arc::clone(&open_files);
                let out = out_tx.clone();
                let ev = ev_tx.clone();
                thread::Builder::new()
                    .name(format!("source-io-{id}"))
                    .spawn(move || io_worker(id, plan, pool, files, out, ev))
            })
            .collect::<std::io::Result<Vec<_>>>()?;

        let stats = TransferStats {
            total_bytes: manifest.total_bytes(),
            total_blocks: manifest.total_objects(),
            ..TransferStats::default()
        };
        Ok(Master {
            cfg,
            to_announce: (0..manifest.files.len() as u32).collect(),
            manifest,
            conn,
            plan,
            pool,
            inflight,
            open_files,
            trace,
            logger,
            events,
            out: Some(out_tx),
            workers,
            writer: Some(writer),
            reader: Some(reader),
            reader_done: false,
            started: Instant::now(),
            stopped: None,
            stats,
            announced: 0,
            remaining: HashMap::new(),
            retries: HashMap::new(),
            earlier_bytes: 0,
        })
    }

    fn send(&self, msg: TransferMessage) {
        if let Some(out) = &self.out {
            let _ = out.send(Outgoing::Msg(msg));
        }
    }

    fn run(&mut self, session_id: u64, resume: bool) -> Result<Outcome> {
        self.started = Instant::now();
        self.send(TransferMessage::Connect {
            object_size: self.manifest.object_size,
            slot_count: self.cfg.slot_count as u32,
            session_id,
            resume,
        });
        match self.next_event()? {
            TransferMessage::Connect {
                object_size,
                session_id: echoed,
                ..
            } => {
                if object_size != self.manifest.object_size || echoed != session_id {
                    return Err(Error::Protocol("sink answered CONNECT with different parameters".into()));
                }
            }
            other => return Err(Error::Protocol(format!("expected CONNECT reply, got {}", other.kind()))),
        }

        let fault_bytes = self
            .cfg
            .fault_at
            .map(|f| (f * self.stats.total_bytes as f64).ceil() as u64);
        self.announce_more();
        while !(self.to_announce.is_empty() && self.announced == 0 && self.remaining.is_empty()) {
            match self.next_event()? {
                TransferMessage::FileId { file_id, skip, .. } => self.on_file_id(file_id, skip)?,
                TransferMessage::BlockSync {
                    file_id,
                    block_index,
                    status,
                } => {
                    self.on_sync(file_id, block_index, status)?;
                    if fault_bytes.is_some_and(|f| self.earlier_bytes + self.stats.bytes_synced >= f) {
                        self.stopped = Some(Instant::now());
                        log::info!(
                            "simulated fault after {} of {} bytes",
                            self.stats.bytes_synced,
                            self.stats.total_bytes
                        );
                        if let FaultAction::ExitProcess(code) = self.cfg.fault_action {
                            // Nothing is flushed or finalized, as in a crash.
                            std::process::exit(code);
                        }
                        return Ok(Outcome::Faulted);
                    }
                }
                other => return Err(Error::Protocol(format!("unexpected {} at source", other.kind()))),
            }
        }
        self.send(TransferMessage::Bye);
        Ok(Outcome::Completed)
    }

    /// Next message from the sink; thread failures surface as errors.
    fn next_event(&mut self) -> Result<TransferMessage> {
        match self.events.recv() {
            Ok(Event::Msg(m)) => Ok(m),
            Ok(Event::ReaderEnd(r)) => {
                self.reader_done = true;
                r?;
                Err(Error::ConnectionLost("sink closed the connection".into()))
            }
            Ok(Event::WriterFailed(e) | Event::WorkerFailed(e)) => Err(e),
            Err(_) => Err(Error::ConnectionLost("all event senders gone".into())),
        }
    }

    fn announce_more(&mut self) {
        let limit = self.cfg.open_file_limit();
        while self.announced + self.remaining.len() < limit {
            let Some(id) = self.to_announce.pop_front() else { break };
            let f = &self.manifest.files[id as usize];
            self.send(TransferMessage::NewFile {
                file_id: id,
                size: f.size,
                mtime: f.mtime,
                path: f.path.clone(),
            });
            self.announced += 1;
        }
    }

    fn on_file_id(&mut self, file_id: u32, skip: bool) -> Result<()> {
        let spec = self
            .manifest
            .file(file_id)
            .ok_or_else(|| Error::Protocol(format!("FILE_ID for unknown file {file_id}")))?
            .clone();
        if self.announced == 0 || self.remaining.contains_key(&file_id) {
            return Err(Error::Protocol(format!("unexpected FILE_ID for file {file_id}")));
        }
        self.announced -= 1;
        let total = spec.object_count(self.manifest.object_size);
        let log = match &self.cfg.ft {
            Some(ft) => load_log(ft, &spec, total)?,
            None => None,
        };
        let done = match classify(skip, log) {
            FileStatus::Complete => {
                self.earlier_bytes += spec.size;
                self.stats.files_skipped += 1;
                self.send(TransferMessage::FileClose { file_id });
                self.stats.files_closed += 1;
                self.announce_more();
                return Ok(());
            }
            FileStatus::Partial(done) => {
                for k in done.iter() {
                    self.earlier_bytes += self.manifest.object(file_id, k)?.length;
                }
                self.stats.files_resumed += 1;
                done
            }
            FileStatus::Untouched => CompletedSet::new(total),
        };
        if done.is_complete() {
            self.close_file(file_id)?;
            return Ok(());
        }
        let path = self.manifest.source_path(&spec);
        let f = File::open(&path).map_err(|e| Error::io_at(&path, e))?;
        self.open_files.write().unwrap().insert(file_id, Arc::new(f));
        self.remaining.insert(file_id, total - done.len());
        let scheduled = self.plan.enqueue_file(file_id, &done)?;
        if !done.is_empty() {
            self.stats.partial_blocks_scheduled += scheduled;
        }
        Ok(())
    }

    fn on_sync(&mut self, file_id: u32, block: u64, status: SyncStatus) -> Result<()> {
        let entry = self.inflight.lock().unwrap().remove(&(file_id, block));
        let Some(InFlight { obj, .. }) = entry else {
            return Err(Error::Protocol(format!(
                "BLOCK_SYNC for block {block} of file {file_id} that is not in flight"
            )));
        };
        match status {
            SyncStatus::Written => {
                self.stats.blocks_synced += 1;
                self.stats.bytes_synced += obj.length;
                if let Some(logger) = &mut self.logger {
                    let spec = &self.manifest.files[file_id as usize];
                    logger.record_completion(spec, spec.object_count(self.manifest.object_size), block)?;
                    push_trace(&self.trace, TraceEvent::Logged(file_id, block));
                }
                if self.plan.mark_synced(file_id, block)? == 0 {
                    self.close_file(file_id)?;
                }
            }
            SyncStatus::WriteFailed => {
                self.stats.blocks_failed += 1;
                let n = self.retries.entry((file_id, block)).or_default();
                *n += 1;
                if *n > self.cfg.max_retries {
                    return Err(Error::RetriesExhausted {
                        file_id,
                        block,
                        attempts: *n,
                    });
                }
                log::debug!("retrying block {block} of file {file_id} (attempt {})", *n + 1);
                self.plan.requeue(obj);
            }
        }
        Ok(())
    }

    fn close_file(&mut self, file_id: u32) -> Result<()> {
        self.send(TransferMessage::FileClose { file_id });
        self.stats.files_closed += 1;
        if let Some(logger) = &mut self.logger {
            logger.finalize_file(&self.manifest.files[file_id as usize])?;
        }
        self.remaining.remove(&file_id);
        self.open_files.write().unwrap().remove(&file_id);
        self.announce_more();
        Ok(())
    }

    /// Stops every thread and assembles the statistics.
    ///
    /// Frames already queued are still written before the connection is
    /// half-closed, so the sink sees whole frames up to the stopping point.
    fn finish(mut self, run: Result<Outcome>) -> Result<TransferStats> {
        self.plan.shutdown();
        self.pool.close();
        if run.is_err() {
            let _ = self.conn.shutdown(Shutdown::Both);
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        self.out = None;
        let wstats = self.writer.take().map(|w| w.join().unwrap_or_default()).unwrap_or_default();
        let _ = self.conn.shutdown(Shutdown::Write);

        if run.is_ok() && !self.reader_done {
            let deadline = Instant::now() + CLOSE_TIMEOUT;
            loop {
                match self.events.recv_deadline(deadline) {
                    Ok(Event::ReaderEnd(_)) => break,
                    Ok(_) => {}
                    Err(RecvTimeoutError::Timeout) => {
                        log::warn!("sink did not close the connection; dropping it");
                        break;
                    }
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
        }
        let _ = self.conn.shutdown(Shutdown::Both);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }

        let outcome = run?;
        let end = self.stopped.unwrap_or_else(Instant::now);
        let mut stats = std::mem::take(&mut self.stats);
        stats.outcome = Some(outcome);
        stats.seconds = end.duration_since(self.started).as_secs_f64();
        stats.blocks_sent = wstats.blocks;
        stats.bytes_sent = wstats.bytes;
        stats.messages_sent = wstats.messages;
        stats.pool_peak = self.pool.stats().peak_in_use;
        stats.log_space_peak = self.logger.as_ref().map_or(0, FtLogger::peak_space);
        if let Some(t) = &self.trace {
            stats.trace = std::mem::take(&mut *t.lock().unwrap());
        }
        Ok(stats)
    }
}

fn reader_loop(conn: Connection, ev: Sender<Event>, trace: Trace) {
    let mut r = BufReader::with_capacity(64 * 1024, conn);
    loop {
        match wire::read_message(&mut r) {
            Ok(Some(m)) => {
                let (f, b) = ids_of(&m);
                push_trace(&trace, TraceEvent::Received(m.kind(), f, b));
                if ev.send(Event::Msg(m)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = ev.send(Event::ReaderEnd(Ok(())));
                return;
            }
            Err(e) => {
                let _ = ev.send(Event::ReaderEnd(Err(e)));
                return;
            }
        }
    }
}

fn writer_loop(
    conn: Connection,
    rx: Receiver<Outgoing>,
    inflight: InFlightTable,
    ev: Sender<Event>,
    trace: Trace,
) -> WriterStats {
    let mut w = BufWriter::with_capacity(64 * 1024, conn);
    let mut stats = WriterStats::default();
    let mut failed = false;
    for out in rx.iter() {
        if failed {
            continue;
        }
        let (kind, r) = match out {
            // Traced before the write so a fast reply can never precede it.
            Outgoing::Msg(m) => {
                let ids = ids_of(&m);
                push_trace(&trace, TraceEvent::Sent(m.kind(), ids.0, ids.1));
                let r = wire::write_message(&mut w, &m);
                (m.kind(), r)
            }
            Outgoing::Block { obj, slot } => {
                let slot = Arc::new(slot);
                // Registered before the frame leaves so its sync always finds it.
                inflight.lock().unwrap().insert(
                    (obj.file_id, obj.block_index),
                    InFlight {
                        obj,
                        _slot: Arc::clone(&slot),
                    },
                );
                push_trace(
                    &trace,
                    TraceEvent::Sent(MessageKind::NewBlock, Some(obj.file_id), Some(obj.block_index)),
                );
                let r = wire::write_block(&mut w, obj.file_id, obj.block_index, &slot);
                if r.is_ok() {
                    stats.blocks += 1;
                    stats.bytes += slot.len() as u64;
                }
                (MessageKind::NewBlock, r)
            }
        };
        let r = r.and_then(|()| {
            if rx.is_empty() {
                w.flush().map_err(|e| Error::ConnectionLost(e.to_string()))
            } else {
                Ok(())
            }
        });
        match r {
            Ok(()) => {
                *stats.messages.entry(kind.name()).or_default() += 1;
            }
            Err(e) => {
                failed = true;
                let _ = ev.send(Event::WriterFailed(e));
            }
        }
    }
    let _ = w.flush();
    stats
}

fn io_worker(
    id: usize,
    plan: Arc<TransferPlan>,
    pool: BufferPool,
    files: OpenFiles,
    out: Sender<Outgoing>,
    ev: Sender<Event>,
) {
    loop {
        let Some(mut slot) = pool.reserve() else { return };
        let Some(claim) = plan.wait_claim(id) else { return };
        if !claim.delay.is_zero() {
            thread::sleep(claim.delay);
        }
        let obj = claim.object;
        let file = files.read().unwrap().get(&obj.file_id).cloned();
        let read = match file {
            Some(f) => {
                slot.set_len(obj.length as usize);
                f.read_exact_at(&mut slot, obj.offset)
                    .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("file {}: {e}", obj.file_id))))
            }
            None => Err(Error::Protocol(format!("file {} is not open", obj.file_id))),
        };
        let released = plan.release_ost(obj.ost_id);
        if let Err(e) = read.and(released) {
            let _ = ev.send(Event::WorkerFailed(e));
            return;
        }
        if out.send(Outgoing::Block { obj, slot }).is_err() {
            return;
        }
    }
}
