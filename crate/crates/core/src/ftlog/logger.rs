use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::encoding::{self, LogMethod, STREAM_REGION_HEADER};
use super::index::{self, IndexEntry};
use super::{measure_log_space, CompletedSet, FtLogConfig, LoggerMechanism};
use crate::error::{Error, Result};
use crate::layout::FileSpec;

/// Owner of every log and index handle of one transfer session.
pub struct FtLogger {
    config: FtLogConfig,
    active: HashMap<u32, ActiveFile>,
    shared: HashMap<String, SharedLog>,
    space: u64,
    peak: u64,
}

struct ActiveFile {
    recorded: CompletedSet,
    backing: Backing,
}

enum Backing {
    Own(OwnLog),
    Region(RegionLog),
}

struct OwnLog {
    file: File,
    data_start: u64,
    data_len: u64,
    bitmap: Vec<u8>,
}

struct RegionLog {
    group: String,
    offset: u64,
    used: u64,
    bitmap: Vec<u8>,
}

struct SharedLog {
    log_path: PathBuf,
    idx_path: PathBuf,
    file: Option<File>,
    entries: Vec<IndexEntry>,
    end: u64,
    idx_len: u64,
}

impl FtLogger {
    /// Opens (creating if needed) the log directory. Existing logs are picked
    /// up lazily when a file is first recorded or finalized.
    pub fn open(config: FtLogConfig) -> Result<Self> {
        config.validate()?;
        let dir = &config.ft_dir;
        let dir_err = |source| Error::LogDir {
            path: dir.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(dir_err)?;
        let probe = dir.join(".probe");
        File::create(&probe).map_err(dir_err)?;
        fs::remove_file(&probe).map_err(dir_err)?;
        let space = measure_log_space(dir)?;
        Ok(FtLogger {
            config,
            active: HashMap::new(),
            shared: HashMap::new(),
            space,
            peak: space,
        })
    }

    pub fn config(&self) -> &FtLogConfig {
        &self.config
    }

    /// Bytes currently held by `.ftl` and `.idx` files.
    pub fn space_bytes(&self) -> u64 {
        self.space
    }

    pub fn peak_space(&self) -> u64 {
        self.peak
    }

    fn grow(&mut self, n: u64) {
        self.space += n;
        self.peak = self.peak.max(self.space);
    }

    fn shrink(&mut self, n: u64) {
        self.space = self.space.saturating_sub(n);
    }

    /// Records that block `k` of `file` is durable at the sink.
    ///
    /// The file's log (and, for shared mechanisms, its region and index entry)
    /// is created on the first call for that file. Recording a block twice is a no-op.
    pub fn record_completion(&mut self, file: &FileSpec, total_blocks: u64, k: u64) -> Result<()> {
        if k >= total_blocks {
            return Err(Error::BlockOutOfRange {
                file_id: file.file_id,
                block: k,
                count: total_blocks,
            });
        }
        if !self.active.contains_key(&file.file_id) {
            let active = self.attach(file, total_blocks)?;
            self.active.insert(file.file_id, active);
        }
        let method = self.config.method;
        let fsync = self.config.fsync;
        let active = self.active.get_mut(&file.file_id).expect("attached above");
        if active.recorded.contains(k) {
            return Ok(());
        }
        let mut grown = 0;
        match &mut active.backing {
            Backing::Own(own) => {
                let path = self.config.file_log_path(file.file_id);
                let io = |e| Error::io_at(&path, e);
                if method.is_bitmap() {
                    let dirty = encoding::set_bit(method, &mut own.bitmap, k);
                    own.file
                        .write_all_at(&own.bitmap[dirty.clone()], own.data_start + dirty.start as u64)
                        .map_err(io)?;
                } else {
                    let mut rec = Vec::with_capacity(33);
                    encoding::append_record(method, k, &mut rec)?;
                    own.file
                        .write_all_at(&rec, own.data_start + own.data_len)
                        .map_err(io)?;
                    own.data_len += rec.len() as u64;
                    grown = rec.len() as u64;
                }
                if fsync {
                    own.file.sync_data().map_err(io)?;
                }
            }
            Backing::Region(region) => {
                let shared = self.shared.get(&region.group).expect("region's log is open");
                let log = shared.file.as_ref().expect("region's log exists");
                let io = |e| Error::io_at(&shared.log_path, e);
                if method.is_bitmap() {
                    let dirty = encoding::set_bit(method, &mut region.bitmap, k);
                    log.write_all_at(&region.bitmap[dirty.clone()], region.offset + dirty.start as u64)
                        .map_err(io)?;
                } else {
                    let mut rec = Vec::with_capacity(33);
                    encoding::append_record(method, k, &mut rec)?;
                    let at = region.offset + STREAM_REGION_HEADER + region.used;
                    log.write_all_at(&rec, at).map_err(io)?;
                    region.used += rec.len() as u64;
                    // Record first, then the used count: a crash in between
                    // leaves the record invisible rather than half-visible.
                    log.write_all_at(&region.used.to_le_bytes(), region.offset)
                        .map_err(io)?;
                }
                if fsync {
                    log.sync_data().map_err(io)?;
                }
            }
        }
        active.recorded.insert(k);
        self.grow(grown);
        Ok(())
    }

    fn attach(&mut self, file: &FileSpec, total_blocks: u64) -> Result<ActiveFile> {
        let method = self.config.method;
        match self.config.group_of(file.file_id) {
            None => {
                let path = self.config.file_log_path(file.file_id);
                let io = |e| Error::io_at(&path, e);
                if let Some(existing) = read_own_log(&path, method, file, total_blocks)? {
                    let f = OpenOptions::new().read(true).write(true).open(&path).map_err(io)?;
                    if existing.torn_bytes > 0 {
                        f.set_len(existing.header_len + existing.valid_len).map_err(io)?;
                        self.shrink(existing.torn_bytes);
                    }
                    return Ok(ActiveFile {
                        recorded: existing.set,
                        backing: Backing::Own(OwnLog {
                            file: f,
                            data_start: existing.header_len,
                            data_len: existing.valid_len,
                            bitmap: existing.bitmap,
                        }),
                    });
                }
                let header = own_header(method, total_blocks, &file.path);
                let bitmap = vec![0u8; encoding::bitmap_len(method, total_blocks) as usize];
                let mut f = OpenOptions::new()
                    .read(true)
                    .write(true)
                    .create(true)
                    .truncate(true)
                    .open(&path)
                    .map_err(io)?;
                f.write_all(header.as_bytes()).map_err(io)?;
                f.write_all(&bitmap).map_err(io)?;
                if self.config.fsync {
                    f.sync_data().map_err(io)?;
                }
                self.grow(header.len() as u64 + bitmap.len() as u64);
                Ok(ActiveFile {
                    recorded: CompletedSet::new(total_blocks),
                    backing: Backing::Own(OwnLog {
                        file: f,
                        data_start: header.len() as u64,
                        data_len: 0,
                        bitmap,
                    }),
                })
            }
            Some(group) => {
                if !self.shared.contains_key(&group) {
                    let log = SharedLog::open(&self.config, &group)?;
                    self.shared.insert(group.clone(), log);
                }
                let shared = self.shared.get_mut(&group).expect("inserted above");
                if let Some(entry) = shared.find(&self.config, &group, &file.path) {
                    let entry = entry.clone();
                    let (set, used, bitmap) = shared.read_region(&entry, method, total_blocks)?;
                    return Ok(ActiveFile {
                        recorded: set,
                        backing: Backing::Region(RegionLog {
                            group,
                            offset: entry.offset,
                            used,
                            bitmap,
                        }),
                    });
                }
                let (entry, grown) = shared.allocate(&self.config, &group, file, total_blocks)?;
                self.grow(grown);
                Ok(ActiveFile {
                    recorded: CompletedSet::new(total_blocks),
                    backing: Backing::Region(RegionLog {
                        group,
                        offset: entry.offset,
                        used: 0,
                        bitmap: vec![0u8; encoding::bitmap_len(method, total_blocks) as usize],
                    }),
                })
            }
        }
    }

    /// Drops the file's log entry once every block is durable at the sink.
    ///
    /// Returns false when no log existed (the file never recorded a block).
    pub fn finalize_file(&mut self, file: &FileSpec) -> Result<bool> {
        self.active.remove(&file.file_id);
        match self.config.group_of(file.file_id) {
            None => {
                let path = self.config.file_log_path(file.file_id);
                let size = match fs::metadata(&path) {
                    Ok(md) => md.len(),
                    Err(e) if e.kind() == ErrorKind::NotFound => return Ok(false),
                    Err(e) => return Err(Error::io_at(&path, e)),
                };
                fs::remove_file(&path).map_err(|e| Error::io_at(&path, e))?;
                self.shrink(size);
                Ok(true)
            }
            Some(group) => {
                if !self.shared.contains_key(&group) {
                    let log = SharedLog::open(&self.config, &group)?;
                    self.shared.insert(group.clone(), log);
                }
                let shared = self.shared.get_mut(&group).expect("inserted above");
                let Some(pos) = shared.position(&self.config, &group, &file.path) else {
                    if shared.entries.is_empty() && shared.file.is_none() {
                        self.shared.remove(&group);
                    }
                    return Ok(false);
                };
                shared.entries.remove(pos);
                let fsync = self.config.fsync;
                if shared.entries.is_empty() {
                    let freed = shared.end + shared.idx_len;
                    let shared = self.shared.remove(&group).expect("present");
                    drop(shared.file);
                    remove_if_exists(&shared.log_path)?;
                    remove_if_exists(&shared.idx_path)?;
                    self.shrink(freed);
                } else {
                    let old = shared.idx_len;
                    let new = index::rewrite_index(&shared.idx_path, &shared.entries, fsync)?;
                    shared.idx_len = new;
                    self.shrink(old);
                    self.grow(new);
                }
                Ok(true)
            }
        }
    }
}

impl SharedLog {
    fn open(config: &FtLogConfig, group: &str) -> Result<Self> {
        let log_path = config.ft_dir.join(format!("{group}.ftl"));
        let idx_path = config.ft_dir.join(format!("{group}.idx"));
        let with_log_name = config.mechanism == LoggerMechanism::Transaction;
        let entries = index::read_index(&idx_path, with_log_name)?;
        let idx_len = match fs::metadata(&idx_path) {
            Ok(md) => md.len(),
            Err(e) if e.kind() == ErrorKind::NotFound => 0,
            Err(e) => return Err(Error::io_at(&idx_path, e)),
        };
        let (file, end) = match OpenOptions::new().read(true).write(true).open(&log_path) {
            Ok(f) => {
                let end = f.metadata().map_err(|e| Error::io_at(&log_path, e))?.len();
                (Some(f), end)
            }
            Err(e) if e.kind() == ErrorKind::NotFound => {
                if !entries.is_empty() {
                    return Err(Error::corrupted(&idx_path, "index has entries but the log is missing"));
                }
                (None, 0)
            }
            Err(e) => return Err(Error::io_at(&log_path, e)),
        };
        // Only the last region may reach past the end of a torn log; its
        // missing tail reads as zeros.
        let last = entries.iter().map(|e| e.offset).max().unwrap_or(0);
        let mut regions_end = end;
        for e in &entries {
            let e_end = e.offset + e.data_length;
            if e_end > end && (e.offset != last || e.offset > end) {
                return Err(Error::corrupted(
                    &idx_path,
                    format!("region of {} ends past the log ({e_end} > {end})", e.file_name),
                ));
            }
            regions_end = regions_end.max(e_end);
        }
        if regions_end > end {
            log::warn!("{}: log is {} bytes short of its last region", log_path.display(), regions_end - end);
        }
        Ok(SharedLog {
            log_path,
            idx_path,
            file,
            entries,
            end: regions_end,
            idx_len,
        })
    }

    fn matches(config: &FtLogConfig, group: &str, entry: &IndexEntry, path: &str) -> bool {
        if entry.file_name != path {
            return false;
        }
        match (&entry.log_file_name, config.mechanism) {
            (Some(log), LoggerMechanism::Transaction) => *log == format!("{group}.ftl"),
            (None, LoggerMechanism::Universal) => true,
            _ => false,
        }
    }

    fn position(&self, config: &FtLogConfig, group: &str, path: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| Self::matches(config, group, e, path))
    }

    fn find(&self, config: &FtLogConfig, group: &str, path: &str) -> Option<&IndexEntry> {
        self.position(config, group, path).map(|i| &self.entries[i])
    }

    fn read_region(
        &self,
        entry: &IndexEntry,
        method: LogMethod,
        total_blocks: u64,
    ) -> Result<(CompletedSet, u64, Vec<u8>)> {
        let corrupt = |d: String| Error::corrupted(&self.log_path, d);
        if entry.total_blocks != total_blocks
            || entry.data_length != encoding::region_size(method, total_blocks)
        {
            return Err(corrupt(format!(
                "index entry for {} ({} blocks, {} bytes) does not match {} blocks under {method}",
                entry.file_name, entry.total_blocks, entry.data_length, total_blocks
            )));
        }
        let log = self
            .file
            .as_ref()
            .ok_or_else(|| corrupt("log file missing".into()))?;
        let mut region = vec![0u8; entry.data_length as usize];
        let avail = read_up_to(log, &mut region, entry.offset).map_err(|e| Error::io_at(&self.log_path, e))?;
        let mut set = CompletedSet::new(total_blocks);
        if method.is_bitmap() {
            for k in encoding::decode_bitmap(method, &region, total_blocks).map_err(corrupt)? {
                set.insert(k);
            }
            Ok((set, 0, region))
        } else {
            let used = if avail < STREAM_REGION_HEADER as usize {
                0
            } else {
                u64::from_le_bytes(region[..8].try_into().unwrap())
            };
            if used > entry.data_length - STREAM_REGION_HEADER {
                return Err(corrupt(format!("{}: used count {used} exceeds region", entry.file_name)));
            }
            let cut = avail < 8 + used as usize;
            let body = &region[8..(8 + used as usize).min(avail.max(8))];
            let decoded = encoding::decode_stream(method, body, total_blocks).map_err(corrupt)?;
            if decoded.torn && !cut {
                return Err(corrupt(format!("{}: partial record inside used bytes", entry.file_name)));
            }
            if cut {
                log::warn!(
                    "{}: region of {} cut short; keeping {} intact bytes",
                    self.log_path.display(),
                    entry.file_name,
                    decoded.valid_len
                );
            }
            for k in decoded.blocks {
                set.insert(k);
            }
            Ok((set, decoded.valid_len as u64, Vec::new()))
        }
    }

    /// Appends a zeroed region for `file` and its index line. Returns the entry
    /// and the number of bytes added to the log directory.
    fn allocate(
        &mut self,
        config: &FtLogConfig,
        group: &str,
        file: &FileSpec,
        total_blocks: u64,
    ) -> Result<(IndexEntry, u64)> {
        let io_log = |e| Error::io_at(&self.log_path, e);
        if self.file.is_none() {
            let f = OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(false)
                .open(&self.log_path)
                .map_err(io_log)?;
            self.end = f.metadata().map_err(io_log)?.len();
            self.file = Some(f);
        }
        let log = self.file.as_ref().expect("created above");
        let size = encoding::region_size(config.method, total_blocks);
        let entry = IndexEntry {
            log_file_name: match config.mechanism {
                LoggerMechanism::Transaction => Some(format!("{group}.ftl")),
                _ => None,
            },
            file_name: file.path.clone(),
            total_blocks,
            offset: self.end,
            data_length: size,
        };
        // Region before index line: an entry never points past the log.
        log.set_len(self.end + size).map_err(io_log)?;
        if config.fsync {
            log.sync_data().map_err(io_log)?;
        }
        let line = entry.to_line();
        let io_idx = |e| Error::io_at(&self.idx_path, e);
        let mut idx = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.idx_path)
            .map_err(io_idx)?;
        idx.write_all(line.as_bytes()).map_err(io_idx)?;
        if config.fsync {
            idx.sync_data().map_err(io_idx)?;
        }
        self.end += size;
        self.idx_len += line.len() as u64;
        self.entries.push(entry.clone());
        Ok((entry, size + line.len() as u64))
    }
}

/// Like `read_exact_at` but stops at end of file; returns the bytes read.
fn read_up_to(f: &File, buf: &mut [u8], offset: u64) -> std::io::Result<usize> {
    let mut done = 0;
    while done < buf.len() {
        match f.read_at(&mut buf[done..], offset + done as u64) {
            Ok(0) => break,
            Ok(n) => done += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(done)
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io_at(path, e)),
    }
}

fn own_header(method: LogMethod, total_blocks: u64, path: &str) -> String {
    format!("ftl {method} {total_blocks} {path}\n")
}

struct OwnContents {
    header_len: u64,
    set: CompletedSet,
    valid_len: u64,
    torn_bytes: u64,
    bitmap: Vec<u8>,
}

fn read_own_log(path: &Path, method: LogMethod, file: &FileSpec, total_blocks: u64) -> Result<Option<OwnContents>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io_at(path, e)),
    };
    let Some(nl) = bytes.iter().position(|&b| b == b'\n') else {
        return Err(Error::corrupted(path, "missing header line"));
    };
    let expected = own_header(method, total_blocks, &file.path);
    if bytes[..=nl] != *expected.as_bytes() {
        return Err(Error::corrupted(
            path,
            format!(
                "header {:?} does not match {:?}",
                String::from_utf8_lossy(&bytes[..nl]),
                expected.trim_end()
            ),
        ));
    }
    let header_len = nl as u64 + 1;
    let data = &bytes[nl + 1..];
    let mut set = CompletedSet::new(total_blocks);
    if method.is_bitmap() {
        let expected = encoding::bitmap_len(method, total_blocks) as usize;
        let mut bitmap = data.to_vec();
        if bitmap.len() < expected {
            // A cut-off tail holds no recoverable bits; read it as zeros.
            log::warn!("{}: bitmap is {} bytes short", path.display(), expected - bitmap.len());
            bitmap.resize(expected, 0);
        }
        let blocks = encoding::decode_bitmap(method, &bitmap, total_blocks).map_err(|d| Error::corrupted(path, d))?;
        for k in blocks {
            set.insert(k);
        }
        return Ok(Some(OwnContents {
            header_len,
            set,
            valid_len: bitmap.len() as u64,
            torn_bytes: 0,
            bitmap,
        }));
    }
    let decoded = encoding::decode_stream(method, data, total_blocks).map_err(|d| Error::corrupted(path, d))?;
    if decoded.torn {
        log::warn!(
            "{}: dropping torn trailing record ({} bytes)",
            path.display(),
            data.len() - decoded.valid_len
        );
    }
    for k in decoded.blocks {
        set.insert(k);
    }
    Ok(Some(OwnContents {
        header_len,
        set,
        valid_len: decoded.valid_len as u64,
        torn_bytes: (data.len() - decoded.valid_len) as u64,
        bitmap: Vec::new(),
    }))
}

/// Reads the completed blocks of `file` from disk. `None` when no log entry exists.
pub fn load_log(config: &FtLogConfig, file: &FileSpec, total_blocks: u64) -> Result<Option<CompletedSet>> {
    match config.group_of(file.file_id) {
        None => Ok(read_own_log(&config.file_log_path(file.file_id), config.method, file, total_blocks)?
            .map(|c| c.set)),
        Some(group) => {
            let shared = SharedLog::open(config, &group)?;
            match shared.find(config, &group, &file.path) {
                None => Ok(None),
                Some(entry) => Ok(Some(shared.read_region(entry, config.method, total_blocks)?.0)),
            }
        }
    }
}

/// Completed blocks of `file`, empty when no log entry exists.
pub fn load_completed(config: &FtLogConfig, file: &FileSpec, total_blocks: u64) -> Result<CompletedSet> {
    Ok(load_log(config, file, total_blocks)?.unwrap_or_else(|| CompletedSet::new(total_blocks)))
}
