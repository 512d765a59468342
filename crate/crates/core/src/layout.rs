//! Dataset model and simulated striping.
//!
//! A [`DatasetManifest`] lists every regular file under a source root together
//! with a stripe layout. Each file is cut into fixed-size objects; the object
//! at byte offset `o` lives on `ost_list[(o / stripe_size) % stripe_count]`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type OstId = u32;

pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Default object (transfer unit) size.
pub const DEFAULT_OBJECT_SIZE: u64 = MIB;

/// Name of the serialized manifest written beside metrics output.
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSpec {
    pub file_id: u32,
    /// Relative path, `/`-separated.
    pub path: String,
    pub size: u64,
    /// Seconds since the epoch.
    pub mtime: u64,
    pub stripe_size: u64,
    pub stripe_count: u32,
    pub ost_list: Vec<OstId>,
}

impl FileSpec {
    pub fn object_count(&self, object_size: u64) -> u64 {
        object_count(self.size, object_size)
    }

    /// OST holding the stripe that contains `offset`.
    pub fn ost_at_offset(&self, offset: u64) -> OstId {
        let stripe = (offset / self.stripe_size) % u64::from(self.stripe_count);
        self.ost_list[stripe as usize]
    }

    fn validate(&self) -> Result<()> {
        if self.stripe_size == 0 {
            return Err(Error::Layout(format!("{}: stripe_size is zero", self.path)));
        }
        if self.stripe_count == 0 || self.ost_list.len() != self.stripe_count as usize {
            return Err(Error::Layout(format!(
                "{}: stripe_count {} does not match ost_list of {}",
                self.path,
                self.stripe_count,
                self.ost_list.len()
            )));
        }
        let unique: HashSet<_> = self.ost_list.iter().collect();
        if unique.len() != self.ost_list.len() {
            return Err(Error::Layout(format!("{}: duplicate OST in ost_list", self.path)));
        }
        Ok(())
    }
}

pub fn object_count(size: u64, object_size: u64) -> u64 {
    size.div_ceil(object_size)
}

/// One transfer unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObjectDescriptor {
    pub file_id: u32,
    pub block_index: u64,
    pub offset: u64,
    pub length: u64,
    pub ost_id: OstId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPolicy {
    pub stripe_size: u64,
    pub stripe_count: u32,
    pub ost_pool: Vec<OstId>,
}

impl Default for LayoutPolicy {
    /// Stripe count one, 1 MiB stripes, eleven OSTs.
    fn default() -> Self {
        LayoutPolicy {
            stripe_size: MIB,
            stripe_count: 1,
            ost_pool: (0..11).collect(),
        }
    }
}

impl LayoutPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.stripe_size == 0 {
            return Err(Error::Layout("stripe_size must be positive".into()));
        }
        if self.stripe_count == 0 {
            return Err(Error::Layout("stripe_count must be at least 1".into()));
        }
        if self.ost_pool.is_empty() {
            return Err(Error::Layout("OST pool is empty".into()));
        }
        if self.stripe_count as usize > self.ost_pool.len() {
            return Err(Error::Layout(format!(
                "stripe_count {} exceeds OST pool of {}",
                self.stripe_count,
                self.ost_pool.len()
            )));
        }
        let unique: HashSet<_> = self.ost_pool.iter().collect();
        if unique.len() != self.ost_pool.len() {
            return Err(Error::Layout("duplicate OST in pool".into()));
        }
        Ok(())
    }

    /// Round-robin OST selection starting at `file_id mod |pool|`.
    pub fn ost_list_for(&self, file_id: u32) -> Vec<OstId> {
        let n = self.ost_pool.len();
        let start = file_id as usize % n;
        (0..self.stripe_count as usize)
            .map(|i| self.ost_pool[(start + i) % n])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub object_size: u64,
    pub files: Vec<FileSpec>,
}

impl DatasetManifest {
    /// Builds a manifest from explicit file specs. File ids must be `0..len` in order.
    pub fn new(root: impl Into<PathBuf>, object_size: u64, files: Vec<FileSpec>) -> Result<Self> {
        if object_size == 0 {
            return Err(Error::Layout("object_size must be positive".into()));
        }
        for (i, f) in files.iter().enumerate() {
            if f.file_id as usize != i {
                return Err(Error::Layout(format!(
                    "file_id {} at position {i}; ids must follow listing order",
                    f.file_id
                )));
            }
            f.validate()?;
        }
        Ok(DatasetManifest {
            root: root.into(),
            object_size,
            files,
        })
    }

    pub fn file(&self, file_id: u32) -> Option<&FileSpec> {
        self.files.get(file_id as usize)
    }

    pub fn object_count(&self, file_id: u32) -> u64 {
        self.file(file_id)
            .map(|f| f.object_count(self.object_size))
            .unwrap_or(0)
    }

    pub fn total_objects(&self) -> u64 {
        self.files.iter().map(|f| f.object_count(self.object_size)).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.files.iter().map(|f| f.size).sum()
    }

    pub fn ost_of(&self, file_id: u32, block_index: u64) -> Result<OstId> {
        Ok(self.object(file_id, block_index)?.ost_id)
    }

    pub fn object(&self, file_id: u32, block_index: u64) -> Result<ObjectDescriptor> {
        let file = self.file(file_id).ok_or_else(|| Error::BlockOutOfRange {
            file_id,
            block: block_index,
            count: 0,
        })?;
        let count = file.object_count(self.object_size);
        if block_index >= count {
            return Err(Error::BlockOutOfRange {
                file_id,
                block: block_index,
                count,
            });
        }
        let offset = block_index * self.object_size;
        Ok(ObjectDescriptor {
            file_id,
            block_index,
            offset,
            length: self.object_size.min(file.size - offset),
            ost_id: file.ost_at_offset(offset),
        })
    }

    pub fn objects(&self, file_id: u32) -> impl Iterator<Item = ObjectDescriptor> + '_ {
        (0..self.object_count(file_id)).map(move |k| {
            self.object(file_id, k)
                .expect("block index below object count")
        })
    }

    /// All OSTs referenced by any file, ascending.
    pub fn osts(&self) -> Vec<OstId> {
        let mut osts: Vec<_> = self
            .files
            .iter()
            .flat_map(|f| f.ost_list.iter().copied())
            .collect();
        osts.sort_unstable();
        osts.dedup();
        osts
    }

    pub fn source_path(&self, file: &FileSpec) -> PathBuf {
        self.root.join(&file.path)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(bytes)?;
        DatasetManifest::new(m.root, m.object_size, m.files)
    }

    /// Hex sha256 of the serialized manifest.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?)))
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_json()?).map_err(|e| Error::io_at(&path, e))?;
        Ok(path)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_json(&bytes)
    }
}

/// Scans `root` recursively and assigns each regular file a stripe layout.
///
/// Files are ordered lexicographically by relative path; ids follow that order.
pub fn build_manifest(root: &Path, object_size: u64, policy: &LayoutPolicy) -> Result<DatasetManifest> {
    if object_size == 0 {
        return Err(Error::Layout("object_size must be positive".into()));
    }
    policy.validate()?;
    let meta = fs::metadata(root).map_err(|e| Error::io_at(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io_at(
            root,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "source root is not a directory"),
        ));
    }

    let mut entries = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io_at(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_str())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Layout(format!("non UTF-8 path {}", entry.path().display())))?
            .join("/");
        let md = entry.metadata().map_err(|e| Error::io_at(entry.path(), e.into()))?;
        let mtime = md
            .modified()
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_secs())
            .unwrap_or(0);
        entries.push((rel, md.len(), mtime));
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let files = entries
        .into_iter()
        .enumerate()
        .map(|(i, (path, size, mtime))| {
            let file_id = i as u32;
            FileSpec {
                file_id,
                path,
                size,
                mtime,
                stripe_size: policy.stripe_size,
                stripe_count: policy.stripe_count,
                ost_list: policy.ost_list_for(file_id),
            }
        })
        .collect();
    DatasetManifest::new(root, object_size, files)
}
