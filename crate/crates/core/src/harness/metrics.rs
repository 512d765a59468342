//! JSON-lines run records and the CSV overhead table.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Configuration echoed into every record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub workload: String,
    pub mechanism: Option<String>,
    pub method: Option<String>,
    pub transaction_size: Option<u64>,
    pub workers: usize,
    pub slot_count: usize,
    pub object_size: u64,
    pub fault_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    /// `baseline`, `faulted`, `resume`, `overhead` or `summary`.
    pub phase: String,
    pub config: RunConfig,
    pub seconds: f64,
    pub bytes: u64,
    pub blocks_sent: u64,
    pub blocks_synced: u64,
    pub blocks_retx: u64,
    pub log_space_peak: u64,
    #[serde(rename = "ER_t", skip_serializing_if = "Option::is_none")]
    pub er_t: Option<f64>,
    #[serde(rename = "TT_t", skip_serializing_if = "Option::is_none")]
    pub tt_t: Option<f64>,
    #[serde(rename = "TBF_t", skip_serializing_if = "Option::is_none")]
    pub tbf_t: Option<f64>,
    #[serde(rename = "TAF_t", skip_serializing_if = "Option::is_none")]
    pub taf_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Collects records in memory and, when given a path, appends each as one JSON line.
#[derive(Debug, Default)]
pub struct MetricsLog {
    path: Option<PathBuf>,
    records: Vec<RunRecord>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
        }
        File::create(&path).map_err(|e| Error::io_at(&path, e))?;
        Ok(MetricsLog {
            path: Some(path),
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, record: RunRecord) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io_at(path, e))?;
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io_at(path, e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRow {
    /// `<mechanism>/<method>`, or `ft-off`.
    pub label: String,
    pub mechanism: Option<String>,
    pub method: Option<String>,
    pub runs: usize,
    pub mean_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// `mean / ft-off mean - 1`.
    pub overhead: f64,
    pub log_space_peak: u64,
}

pub fn write_overhead_csv(path: &Path, rows: &[OverheadRow]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record([
        "label",
        "mechanism",
        "method",
        "runs",
        "mean_seconds",
        "min_seconds",
        "max_seconds",
        "overhead",
        "log_space_peak",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.mechanism.clone().unwrap_or_default(),
            r.method.clone().unwrap_or_default(),
            r.runs.to_string(),
            format!("{:.6}", r.mean_seconds),
            format!("{:.6}", r.min_seconds),
            format!("{:.6}", r.max_seconds),
            format!("{:.6}", r.overhead),
            r.log_space_peak.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io_at(path, e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
