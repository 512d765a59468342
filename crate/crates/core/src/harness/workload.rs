//! Synthetic datasets with reproducible contents.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{build_manifest, DatasetManifest, LayoutPolicy, GIB, MIB};

pub const DEFAULT_SEED: u64 = 0x5eed_f11e;

/// First file's mtime; file `i` gets `MTIME_BASE + i`.
pub const MTIME_BASE: u64 = 1_600_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Small,
    Big,
}

impl std::str::FromStr for WorkloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(WorkloadKind::Small),
            "big" => Ok(WorkloadKind::Big),
            _ => Err(Error::Config(format!("unknown workload {s:?} (small or big)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub file_count: u64,
    pub file_size: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    /// `10000 * scale` files of 1 MiB.
    pub fn small(scale: f64) -> Self {
        WorkloadSpec {
            name: "small".into(),
            file_count: (10_000.0 * scale).round() as u64,
            file_size: MIB,
            seed: DEFAULT_SEED,
        }
    }

    /// `100 * scale` files of `size_scale` GiB.
    pub fn big(scale: f64, size_scale: f64) -> Self {
        WorkloadSpec {
            name: "big".into(),
            file_count: (100.0 * scale).round() as u64,
            file_size: (GIB as f64 * size_scale).round() as u64,
            seed: DEFAULT_SEED,
        }
    }

    /// 500 files of 1 MiB.
    pub fn desk_small() -> Self {
        Self::small(0.05)
    }

    /// 8 files of 64 MiB.
    pub fn desk_big() -> Self {
        Self::big(0.08, 1.0 / 16.0)
    }

    pub fn desk(kind: WorkloadKind) -> Self {
        match kind {
            WorkloadKind::Small => Self::desk_small(),
            WorkloadKind::Big => Self::desk_big(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_bytes(&self) -> u64 {
        self.file_count * self.file_size
    }

    pub fn file_name(&self, i: u64) -> String {
        format!("f{i:05}.dat")
    }
}

/// Free bytes on the file system holding `path` (or its nearest existing ancestor).
pub fn available_space(path: &Path) -> Result<u64> {
    let mut probe = path;
    while !probe.exists() {
        probe = probe.parent().unwrap_or(Path::new("/"));
    }
    let c = std::ffi::CString::new(probe.as_os_str().as_encoded_bytes())
        .map_err(|_| Error::Config(format!("path {} contains NUL", probe.display())))?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    // SAFETY: `c` is a valid NUL-terminated path and `st` is a writable statvfs.
    if unsafe { libc::statvfs(c.as_ptr(), &mut st) } != 0 {
        return Err(Error::io_at(probe, std::io::Error::last_os_error()));
    }
    Ok(st.f_bavail as u64 * st.f_frsize as u64)
}

/// Writes the workload's files into `out_dir` and returns their manifest.
///
/// Contents come from ChaCha8 seeded with `spec.seed`, one stream per file, so
/// the same spec always produces the same bytes. Existing files with the
/// workload's names are overwritten; any other entry in `out_dir` is an error.
pub fn gen_workload(spec: &WorkloadSpec, out_dir: &Path, object_size: u64, policy: &LayoutPolicy) -> Result<DatasetManifest> {
    if spec.file_count == 0 {
        return Err(Error::Config(format!("workload {} has no files", spec.name)));
    }
    let needed = spec.total_bytes();
    let available = available_space(out_dir)?;
    let already = existing_bytes(spec, out_dir)?;
    if needed.saturating_sub(already) > available {
        return Err(Error::InsufficientSpace { needed, available });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io_at(out_dir, e))?;

    let mut buf = vec![0u8; MIB as usize];
    for i in 0..spec.file_count {
        let path = out_dir.join(spec.file_name(i));
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i);
        let f = File::create(&path).map_err(|e| Error::io_at(&path, e))?;
        let mut w = BufWriter::with_capacity(MIB as usize, f);
        let mut left = spec.file_size;
        while left > 0 {
            let n = left.min(buf.len() as u64) as usize;
            rng.fill_bytes(&mut buf[..n]);
            w.write_all(&buf[..n]).map_err(|e| Error::io_at(&path, e))?;
            left -= n as u64;
        }
        let f = w.into_inner().map_err(|e| Error::io_at(&path, e.into_error()))?;
        f.set_modified(UNIX_EPOCH + Duration::from_secs(MTIME_BASE + i))
            .map_err(|e| Error::io_at(&path, e))?;
    }
    build_manifest(out_dir, object_size, policy)
}

fn existing_bytes(spec: &WorkloadSpec, out_dir: &Path) -> Result<u64> {
    let rd = match fs::read_dir(out_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(Error::io_at(out_dir, e)),
    };
    let mut total = 0;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io_at(out_dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let ours = name.len() == 10
            && name.starts_with('f')
            && name.ends_with(".dat")
            && name[1..6].bytes().all(|b| b.is_ascii_digit())
            && name[1..6].parse::<u64>().is_ok_and(|i| i < spec.file_count);
        if !ours {
            return Err(Error::Config(format!(
                "{} holds {name:?}, which is not part of workload {}",
                out_dir.display(),
                spec.name
            )));
        }
        total += entry.metadata().map_err(|e| Error::io_at(entry.path(), e))?.len();
    }
    Ok(total)
}
