//! Fault/resume experiments and the overhead matrix.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::metrics::{MetricsLog, OverheadRow, RunConfig, RunRecord};
use super::FaultPolicy;
use crate::error::{Error, Result};
use crate::ftlog::{FtLogConfig, LogMethod, LoggerMechanism, DEFAULT_TRANSACTION_SIZE};
use crate::layout::{DatasetManifest, OstId};
use crate::recovery::{self, Digest256, Mismatch};
use crate::transport::{transfer_local, Outcome, SinkConfig, SourceConfig, TransferStats};

/// Logging settings of one experiment; `None` in [`ExperimentConfig::ft`] means ft-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FtSettings {
    pub mechanism: LoggerMechanism,
    pub method: LogMethod,
    pub transaction_size: u64,
    pub fsync: bool,
}

impl FtSettings {
    pub fn new(mechanism: LoggerMechanism, method: LogMethod) -> Self {
        FtSettings {
            mechanism,
            method,
            transaction_size: DEFAULT_TRANSACTION_SIZE,
            fsync: true,
        }
    }

    /// The 18 mechanism × method pairs.
    pub fn all() -> Vec<FtSettings> {
        LoggerMechanism::ALL
            .iter()
            .flat_map(|&m| LogMethod::ALL.iter().map(move |&k| FtSettings::new(m, k)))
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.mechanism, self.method)
    }
}

/// Source slots used by the desk-scale experiments.
pub const DESK_SLOT_COUNT: usize = 16;

/// Per-object OST service time used by the desk-scale experiments.
pub const DESK_OST_SERVICE_TIME: Duration = Duration::from_millis(8);

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Workload name echoed into records.
    pub workload: String,
    pub ft: Option<FtSettings>,
    pub workers: usize,
    pub slot_count: usize,
    pub sink_slots: usize,
    pub sink_write_workers: usize,
    pub sync_writes: bool,
    /// Service time of every OST per object; entries in `congestion` override it.
    pub ost_service_time: Duration,
    pub congestion: Vec<(OstId, Duration)>,
    /// Scratch space: the sink writes to `<work_dir>/dest`, logs go to `<work_dir>/ftlads`.
    pub work_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(workload: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            workload: workload.into(),
            ft: None,
            workers: crate::transport::source::DEFAULT_WORKERS,
            slot_count: crate::transport::source::DEFAULT_SLOTS,
            sink_slots: crate::transport::sink::DEFAULT_SINK_SLOTS,
            sink_write_workers: crate::transport::sink::DEFAULT_WRITE_WORKERS,
            sync_writes: false,
            ost_service_time: Duration::ZERO,
            congestion: Vec::new(),
            work_dir: work_dir.into(),
        }
    }

    /// Desk-scale profile: a 16-slot in-flight window and an 8 ms service
    /// time on every OST, so runs are storage-bound rather than CPU-bound.
    pub fn desk(workload: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            slot_count: DESK_SLOT_COUNT,
            ost_service_time: DESK_OST_SERVICE_TIME,
            ..Self::new(workload, work_dir)
        }
    }

    pub fn dest_dir(&self) -> PathBuf {
        self.work_dir.join("dest")
    }

    pub fn ft_dir(&self) -> PathBuf {
        self.work_dir.join(crate::ftlog::FT_DIR_NAME)
    }

    fn source_config(&self, manifest: &DatasetManifest, fault_at: Option<f64>, resume: bool) -> SourceConfig {
        let mut congestion: Vec<(OstId, Duration)> = Vec::new();
        if !self.ost_service_time.is_zero() {
            congestion.extend(manifest.osts().into_iter().map(|o| (o, self.ost_service_time)));
        }
        congestion.extend(self.congestion.iter().copied());
        SourceConfig {
            workers: self.workers,
            slot_count: self.slot_count,
            resume,
            ft: self.ft.map(|s| {
                let mut c = FtLogConfig::new(s.mechanism, s.method, self.ft_dir());
                c.transaction_size = s.transaction_size;
                c.fsync = s.fsync;
                c
            }),
            fault_at,
            congestion,
            ..SourceConfig::default()
        }
    }

    fn sink_config(&self) -> SinkConfig {
        SinkConfig {
            slot_count: self.sink_slots,
            write_workers: self.sink_write_workers,
            sync_writes: self.sync_writes,
            ..SinkConfig::new(self.dest_dir())
        }
    }

    fn run_config(&self, object_size: u64, fault_at: Option<f64>) -> RunConfig {
        RunConfig {
            workload: self.workload.clone(),
            mechanism: self.ft.map(|s| s.mechanism.to_string()),
            method: self.ft.map(|s| s.method.to_string()),
            transaction_size: self
                .ft
                .filter(|s| s.mechanism == LoggerMechanism::Transaction)
                .map(|s| s.transaction_size),
            workers: self.workers,
            slot_count: self.slot_count,
            object_size,
            fault_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentStatus {
    Passed,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub run_id: String,
    pub fault_at: Option<f64>,
    pub tt_t: f64,
    pub tbf_t: f64,
    pub taf_t: f64,
    /// `TBF_t + TAF_t - TT_t`, unclamped.
    pub er_t: f64,
    pub total_blocks: u64,
    /// Blocks sent in excess of one copy each, summed over the faulted and resumed sessions.
    pub retransmitted_blocks: u64,
    pub log_space_peak: u64,
    pub faulted: Option<TransferStats>,
    pub resumed: Option<TransferStats>,
    pub mismatches: Vec<(String, String)>,
    pub status: ExperimentStatus,
    pub diagnostics: Vec<String>,
}

/// Runs transfers of one dataset under one configuration.
pub struct Experiment<'m> {
    pub manifest: Arc<DatasetManifest>,
    pub config: ExperimentConfig,
    digests: Vec<Digest256>,
    metrics: &'m mut MetricsLog,
    next_run: u64,
}

impl<'m> Experiment<'m> {
    /// Hashes the source files once; every later verification reuses the digests.
    pub fn new(manifest: Arc<DatasetManifest>, config: ExperimentConfig, metrics: &'m mut MetricsLog) -> Result<Self> {
        let digests = recovery::source_digests(&manifest)?;
        Ok(Experiment {
            manifest,
            config,
            digests,
            metrics,
            next_run: 0,
        })
    }

    /// Reuses digests computed for the same manifest.
    pub fn with_digests(
        manifest: Arc<DatasetManifest>,
        config: ExperimentConfig,
        digests: Vec<Digest256>,
        metrics: &'m mut MetricsLog,
    ) -> Self {
        Experiment {
            manifest,
            config,
            digests,
            metrics,
            next_run: 0,
        }
    }

    pub fn digests(&self) -> &[Digest256] {
        &self.digests
    }

    pub fn metrics(&self) -> &MetricsLog {
        self.metrics
    }

    fn run_id(&mut self) -> String {
        self.next_run += 1;
        let label = self.config.ft.map_or_else(|| "ft-off".to_string(), |s| s.label());
        format!("{}-{}-{}", self.config.workload, label.replace('/', "-"), self.next_run)
    }

    /// Empties the destination and log directory.
    pub fn reset(&self) -> Result<()> {
        for dir in [self.config.dest_dir(), self.config.ft_dir()] {
            match fs::remove_dir_all(&dir) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io_at(&dir, e)),
            }
        }
        fs::create_dir_all(self.config.dest_dir()).map_err(|e| Error::io_at(self.config.dest_dir(), e))
    }

    /// One transfer session against the current destination state.
    pub fn transfer(&self, fault_at: Option<f64>, resume: bool) -> Result<TransferStats> {
        settle();
        let (stats, _) = transfer_local(
            Arc::clone(&self.manifest),
            &self.config.source_config(&self.manifest, fault_at, resume),
            &self.config.sink_config(),
        )?;
        Ok(stats)
    }

    pub fn verify(&self) -> Result<Vec<Mismatch>> {
        recovery::verify_dataset(&self.manifest, &self.config.dest_dir(), Some(&self.digests))
    }

    fn record(&mut self, run_id: &str, phase: &str, fault_at: Option<f64>, s: &TransferStats) -> Result<()> {
        let config = self.config.run_config(self.manifest.object_size, fault_at);
        self.metrics.push(RunRecord {
            run_id: run_id.to_string(),
            phase: phase.to_string(),
            config,
            seconds: s.seconds,
            bytes: s.bytes_sent,
            blocks_sent: s.blocks_sent,
            blocks_synced: s.blocks_synced,
            blocks_retx: s.blocks_failed,
            log_space_peak: s.log_space_peak,
            er_t: None,
            tt_t: None,
            tbf_t: None,
            taf_t: None,
            status: None,
            diagnostics: Vec::new(),
        })
    }

    /// Fault-free run from an empty destination; returns its stats (TT_t is `seconds`).
    pub fn baseline(&mut self) -> Result<TransferStats> {
        let run_id = self.run_id();
        self.reset()?;
        let s = self.transfer(None, false)?;
        self.record(&run_id, "baseline", None, &s)?;
        Ok(s)
    }

    /// Baseline, faulted run and resume, then verification.
    pub fn run_experiment(&mut self, fault: Option<FaultPolicy>) -> Result<RecoveryReport> {
        let tt = self.baseline()?.seconds;
        self.run_recovery(fault, tt)
    }

    /// Faulted run and resume against a known fault-free time `tt`.
    ///
    /// Always emits one summary record, including when a run fails; a failed
    /// run is reported with status `failed` rather than as an error.
    pub fn run_recovery(&mut self, fault: Option<FaultPolicy>, tt: f64) -> Result<RecoveryReport> {
        let run_id = self.run_id();
        let fault_at = fault.map(|f| f.trigger);
        let mut report = RecoveryReport {
            run_id: run_id.clone(),
            fault_at,
            tt_t: tt,
            tbf_t: tt,
            taf_t: 0.0,
            er_t: 0.0,
            total_blocks: self.manifest.total_objects(),
            retransmitted_blocks: 0,
            log_space_peak: 0,
            faulted: None,
            resumed: None,
            mismatches: Vec::new(),
            status: ExperimentStatus::Passed,
            diagnostics: Vec::new(),
        };
        if let Some(policy) = fault {
            if let Err(e) = self.faulted_and_resumed(policy, &run_id, &mut report) {
                report.status = ExperimentStatus::Failed;
                report.diagnostics.push(e.to_string());
            }
        }
        let summary = RunRecord {
            run_id,
            phase: "summary".into(),
            config: self.config.run_config(self.manifest.object_size, fault_at),
            seconds: report.tbf_t + report.taf_t,
            bytes: report.faulted.as_ref().map_or(0, |s| s.bytes_sent)
                + report.resumed.as_ref().map_or(0, |s| s.bytes_sent),
            blocks_sent: report.faulted.as_ref().map_or(0, |s| s.blocks_sent)
                + report.resumed.as_ref().map_or(0, |s| s.blocks_sent),
            blocks_synced: report.faulted.as_ref().map_or(0, |s| s.blocks_synced)
                + report.resumed.as_ref().map_or(0, |s| s.blocks_synced),
            blocks_retx: report.retransmitted_blocks,
            log_space_peak: report.log_space_peak,
            er_t: Some(report.er_t),
            tt_t: Some(report.tt_t),
            tbf_t: Some(report.tbf_t),
            taf_t: Some(report.taf_t),
            status: Some(
                match report.status {
                    ExperimentStatus::Passed => "passed",
                    ExperimentStatus::Failed => "failed",
                }
                .into(),
            ),
            diagnostics: report.diagnostics.clone(),
        };
        self.metrics.push(summary)?;
        Ok(report)
    }

    fn faulted_and_resumed(&mut self, policy: FaultPolicy, run_id: &str, report: &mut RecoveryReport) -> Result<()> {
        policy.validate()?;
        self.reset()?;
        let faulted = self.transfer(Some(policy.trigger), false)?;
        self.record(run_id, "faulted", Some(policy.trigger), &faulted)?;
        report.tbf_t = faulted.seconds;
        report.log_space_peak = faulted.log_space_peak;
        if faulted.outcome != Some(Outcome::Faulted) {
            report.diagnostics.push(format!(
                "fault at {} never fired; run ended {:?}",
                policy.trigger, faulted.outcome
            ));
        }
        let resumed = self.transfer(None, true)?;
        self.record(run_id, "resume", Some(policy.trigger), &resumed)?;
        report.taf_t = resumed.seconds;
        report.er_t = report.tbf_t + report.taf_t - report.tt_t;
        report.log_space_peak = report.log_space_peak.max(resumed.log_space_peak);
        report.retransmitted_blocks = (faulted.blocks_sent + resumed.blocks_sent).saturating_sub(report.total_blocks);
        report.faulted = Some(faulted);
        report.resumed = Some(resumed);

        let mismatches = self.verify()?;
        report.mismatches = mismatches
            .iter()
            .map(|m| (m.path.clone(), format!("{:?}", m.kind)))
            .collect();
        if !mismatches.is_empty() {
            report.status = ExperimentStatus::Failed;
            report
                .diagnostics
                .push(format!("{} files differ after resume", mismatches.len()));
        }
        if self.config.ft.is_some() {
            let leftover = crate::ftlog::measure_log_space(&self.config.ft_dir())?;
            let session = recovery::read_session(&self.config.ft_dir())?;
            if leftover != 0 || session.is_some() {
                report.status = ExperimentStatus::Failed;
                report
                    .diagnostics
                    .push(format!("log directory not empty after resume ({leftover} log bytes)"));
            }
        }
        Ok(())
    }

    /// Fault-free runs under ft-off and every pair in `settings`, `reps` times
    /// each, interleaved so drift affects all configurations alike.
    pub fn overhead_matrix(&mut self, settings: &[FtSettings], reps: usize) -> Result<Vec<OverheadRow>> {
        let mut configs: Vec<Option<FtSettings>> = vec![None];
        configs.extend(settings.iter().copied().map(Some));
        let mut times = vec![Vec::new(); configs.len()];
        let mut space = vec![0u64; configs.len()];
        let saved = self.config.ft;
        for _ in 0..reps {
            for (i, c) in configs.iter().enumerate() {
                self.config.ft = *c;
                let run_id = self.run_id();
                self.reset()?;
                let s = self.transfer(None, false)?;
                if s.outcome != Some(Outcome::Completed) {
                    self.config.ft = saved;
                    return Err(Error::Protocol(format!("overhead run {run_id} ended {:?}", s.outcome)));
                }
                self.record(&run_id, "overhead", None, &s)?;
                times[i].push(s.seconds);
                space[i] = space[i].max(s.log_space_peak);
            }
        }
        self.config.ft = saved;

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let base = mean(&times[0]);
        Ok(configs
            .iter()
            .zip(times.iter().zip(space))
            .map(|(c, (t, sp))| OverheadRow {
                label: c.map_or_else(|| "ft-off".to_string(), |s| s.label()),
                mechanism: c.map(|s| s.mechanism.to_string()),
                method: c.map(|s| s.method.to_string()),
                runs: t.len(),
                mean_seconds: mean(t),
                min_seconds: t.iter().copied().fold(f64::INFINITY, f64::min),
                max_seconds: t.iter().copied().fold(0.0, f64::max),
                overhead: if c.is_none() { 0.0 } else { mean(t) / base - 1.0 },
                log_space_peak: sp,
            })
            .collect())
    }
}

/// Flushes dirty pages so one run's writeback does not land in the next run's timing.
fn settle() {
    // SAFETY: sync(2) takes no arguments and cannot fail.
    unsafe { libc::sync() };
}
