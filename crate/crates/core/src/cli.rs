//! Command-line front end.
//!
//! Settings resolve in order: command-line flags, then the TOML file given
//! with `--config`, then built-in defaults. `--print-config` prints the
//! resolved settings as JSON and exits.
//!
//! Config file layout (every key optional):
//!
//! ```toml
//! [endpoint]
//! addr = "127.0.0.1:7400"
//!
//! [transfer]
//! workers = 4
//! object_size = 1048576
//! slots = 256
//! max_retries = 3
//!
//! [ft]
//! mechanism = "txn"      # file | txn | universal | off
//! method = "bit64"       # char | enc | int | binary | bit8 | bit64
//! txn_size = 4
//! ft_dir = "/home/me/.ftlads"
//! fsync = true
//!
//! [layout]
//! stripe_size = 1048576
//! stripe_count = 1
//! osts = 11
//!
//! [sink]
//! dest = "/data/in"
//! slots = 256
//! write_workers = 4
//! sync_writes = false
//! ```

use std::ffi::OsString;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ftlog::{FtLogConfig, LogMethod, LoggerMechanism, DEFAULT_TRANSACTION_SIZE};
use crate::harness::{
    gen_workload, write_overhead_csv, Experiment, ExperimentConfig, ExperimentStatus, FaultPolicy, FtSettings,
    MetricsLog, WorkloadKind, WorkloadSpec, DESK_OST_SERVICE_TIME, DESK_SLOT_COUNT, FAULT_POINTS,
};
use crate::layout::{build_manifest, DatasetManifest, LayoutPolicy, DEFAULT_OBJECT_SIZE};
use crate::recovery::{check_session, verify_dataset};
use crate::transport::{self, sink, source, Connection, FaultAction, Outcome, SinkConfig, SourceConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;
pub const EXIT_RESUME_PIN: i32 = 5;
/// The source stopped itself at `--fault-at`.
pub const EXIT_FAULTED: i32 = 6;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7400";

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Layout(_) => EXIT_CONFIG,
        Error::DatasetChanged { .. } | Error::ResumeMismatch(_) | Error::PendingSession(_) => EXIT_RESUME_PIN,
        e if e.is_protocol() => EXIT_PROTOCOL,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "objxfer", version, about = "Object-level dataset transfer with resumable completion logs")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a sink that writes received datasets under a destination root.
    Recv(RecvArgs),
    /// Send a directory (or a saved manifest) to a sink.
    Send(SendArgs),
    /// Generate a synthetic workload.
    Gen(GenArgs),
    /// Run fault/resume experiments or the overhead matrix in-process.
    Experiment(ExperimentArgs),
    /// Compare a source tree with its copy by SHA-256.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML settings file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the resolved settings as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Args)]
struct RecvArgs {
    #[command(flatten)]
    common: Common,
    /// Address to listen on.
    #[arg(long)]
    listen: Option<String>,
    /// Destination root.
    #[arg(long)]
    dest: Option<PathBuf>,
    /// Receive buffer slots.
    #[arg(long)]
    slots: Option<usize>,
    /// Threads writing blocks to disk.
    #[arg(long)]
    write_workers: Option<usize>,
    /// fdatasync every block before acknowledging it.
    #[arg(long)]
    sync_writes: bool,
    /// Exit after this many sessions.
    #[arg(long)]
    sessions: Option<usize>,
}

/// `off` or a logger mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FtChoice {
    Off,
    On(LoggerMechanism),
}

impl std::str::FromStr for FtChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "off" {
            Ok(FtChoice::Off)
        } else {
            s.parse().map(FtChoice::On)
        }
    }
}

#[derive(Debug, Args)]
struct FtArgs {
    /// Logger mechanism: file, txn, universal, or off.
    #[arg(long, value_name = "MECHANISM")]
    ft: Option<FtChoice>,
    /// Log method: char, enc, int, binary, bit8, bit64.
    #[arg(long)]
    method: Option<LogMethod>,
    /// Files per transaction log.
    #[arg(long)]
    txn_size: Option<u64>,
    /// Log directory (default ~/.ftlads).
    #[arg(long)]
    ft_dir: Option<PathBuf>,
    /// Do not fsync log records.
    #[arg(long)]
    no_fsync: bool,
}

#[derive(Debug, Args)]
struct SendArgs {
    #[command(flatten)]
    common: Common,
    /// Source directory or manifest file.
    source: PathBuf,
    /// Sink address.
    #[arg(long)]
    to: Option<String>,
    #[command(flatten)]
    ft: FtArgs,
    /// I/O worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Object (block) size in bytes.
    #[arg(long)]
    object_size: Option<u64>,
    /// Source buffer slots (in-flight window).
    #[arg(long)]
    slots: Option<usize>,
    /// Continue an interrupted session from its logs.
    #[arg(long)]
    resume: bool,
    /// Write transfer statistics as JSON here.
    #[arg(long, value_name = "PATH")]
    metrics_out: Option<PathBuf>,
    /// Exit abruptly once this fraction of the bytes is acknowledged.
    #[arg(long, value_name = "FRACTION")]
    fault_at: Option<f64>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Workload shape: big or small.
    #[arg(long, default_value = "big")]
    kind: WorkloadKind,
    /// File-count scale (default: desk size, 0.05 small / 0.08 big).
    #[arg(long)]
    scale: Option<f64>,
    /// File-size scale for big workloads, in GiB (default 1/16).
    #[arg(long)]
    size_scale: Option<f64>,
    /// RNG seed for file contents.
    #[arg(long, default_value_t = crate::harness::workload::DEFAULT_SEED)]
    seed: u64,
    /// Directory to create the files in.
    #[arg(long)]
    out: PathBuf,
    /// Also write the manifest here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Workload shape: big or small.
    #[arg(long, default_value = "big")]
    kind: WorkloadKind,
    /// Scratch directory (source, destination and logs live below it).
    #[arg(long)]
    work_dir: PathBuf,
    /// Comma-separated fault points.
    #[arg(long, value_delimiter = ',', default_values_t = FAULT_POINTS.to_vec())]
    fault_at: Vec<f64>,
    #[command(flatten)]
    ft: FtArgs,
    /// I/O worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Source buffer slots (in-flight window).
    #[arg(long)]
    slots: Option<usize>,
    /// Per-object service time of every OST, in milliseconds.
    #[arg(long)]
    ost_delay_ms: Option<u64>,
    /// Run the overhead matrix instead of fault experiments.
    #[arg(long)]
    matrix: bool,
    /// Repetitions per matrix configuration.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// JSON-lines output.
    #[arg(long, value_name = "PATH")]
    metrics_out: Option<PathBuf>,
    /// CSV output of the matrix.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Original tree.
    src: PathBuf,
    /// Copy to check.
    dst: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    endpoint: EndpointFile,
    transfer: TransferFile,
    ft: FtFile,
    layout: LayoutFile,
    sink: SinkFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EndpointFile {
    addr: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TransferFile {
    workers: Option<usize>,
    object_size: Option<u64>,
    slots: Option<usize>,
    max_retries: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FtFile {
    mechanism: Option<String>,
    method: Option<String>,
    txn_size: Option<u64>,
    ft_dir: Option<PathBuf>,
    fsync: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LayoutFile {
    stripe_size: Option<u64>,
    stripe_count: Option<u32>,
    osts: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SinkFile {
    dest: Option<PathBuf>,
    slots: Option<usize>,
    write_workers: Option<usize>,
    sync_writes: Option<bool>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn home_dir() -> PathBuf {
    std::env::var_os("HOME").map_or_else(|| PathBuf::from("."), PathBuf::from)
}

/// Resolved logging settings.
#[derive(Debug, Clone, Serialize)]
struct FtResolved {
    mechanism: LoggerMechanism,
    method: LogMethod,
    txn_size: u64,
    ft_dir: PathBuf,
    fsync: bool,
}

impl FtResolved {
    fn to_config(&self) -> FtLogConfig {
        let mut c = FtLogConfig::new(self.mechanism, self.method, &self.ft_dir);
        c.transaction_size = self.txn_size;
        c.fsync = self.fsync;
        c
    }
}

fn resolve_ft(flags: &FtArgs, file: &FtFile) -> Result<Option<FtResolved>> {
    let choice = match (flags.ft, &file.mechanism) {
        (Some(c), _) => c,
        (None, Some(m)) => m.parse()?,
        (None, None) => FtChoice::Off,
    };
    let method = match (flags.method, &file.method) {
        (Some(m), _) => Some(m),
        (None, Some(m)) => Some(m.parse()?),
        (None, None) => None,
    };
    let FtChoice::On(mechanism) = choice else {
        if flags.method.is_some() || flags.txn_size.is_some() {
            return Err(Error::Config("--method/--txn-size given with fault tolerance off".into()));
        }
        return Ok(None);
    };
    let txn_size = flags.txn_size.or(file.txn_size).unwrap_or(DEFAULT_TRANSACTION_SIZE);
    if txn_size == 0 {
        return Err(Error::Config("transaction size must be at least 1".into()));
    }
    Ok(Some(FtResolved {
        mechanism,
        method: method.unwrap_or(LogMethod::Bit64),
        txn_size,
        ft_dir: flags
            .ft_dir
            .clone()
            .or_else(|| file.ft_dir.clone())
            .unwrap_or_else(|| FtLogConfig::default_dir(&home_dir())),
        fsync: !flags.no_fsync && file.fsync.unwrap_or(true),
    }))
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        Err(Error::Config(format!("{name} must be at least 1")))
    } else {
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize)]
struct SendResolved {
    source: PathBuf,
    addr: String,
    workers: usize,
    object_size: u64,
    slots: usize,
    max_retries: u32,
    ft: Option<FtResolved>,
    resume: bool,
    layout: LayoutPolicy,
    metrics_out: Option<PathBuf>,
    fault_at: Option<f64>,
}

fn resolve_layout(file: &LayoutFile) -> Result<LayoutPolicy> {
    let d = LayoutPolicy::default();
    let p = LayoutPolicy {
        stripe_size: file.stripe_size.unwrap_or(d.stripe_size),
        stripe_count: file.stripe_count.unwrap_or(d.stripe_count),
        ost_pool: file.osts.map_or(d.ost_pool, |n| (0..n).collect()),
    };
    p.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(p)
}

fn resolve_send(a: &SendArgs, file: &FileConfig) -> Result<SendResolved> {
    let object_size = a
        .object_size
        .or(file.transfer.object_size)
        .unwrap_or(DEFAULT_OBJECT_SIZE);
    if object_size == 0 || object_size > u32::MAX as u64 {
        return Err(Error::Config(format!("object size {object_size} out of range")));
    }
    if let Some(f) = a.fault_at {
        FaultPolicy::at(f).validate()?;
    }
    Ok(SendResolved {
        source: a.source.clone(),
        addr: a
            .to
            .clone()
            .or_else(|| file.endpoint.addr.clone())
            .unwrap_or_else(|| DEFAULT_ADDR.to_string()),
        workers: positive(
            "workers",
            a.workers.or(file.transfer.workers).unwrap_or(source::DEFAULT_WORKERS),
        )?,
        object_size,
        slots: positive("slots", a.slots.or(file.transfer.slots).unwrap_or(source::DEFAULT_SLOTS))?,
        max_retries: file.transfer.max_retries.unwrap_or(source::DEFAULT_MAX_RETRIES),
        ft: resolve_ft(&a.ft, &file.ft)?,
        resume: a.resume,
        layout: resolve_layout(&file.layout)?,
        metrics_out: a.metrics_out.clone(),
        fault_at: a.fault_at,
    })
}

#[derive(Debug, Clone, Serialize)]
struct RecvResolved {
    listen: String,
    dest: PathBuf,
    slots: usize,
    write_workers: usize,
    sync_writes: bool,
    sessions: Option<usize>,
}

fn resolve_recv(a: &RecvArgs, file: &FileConfig) -> Result<RecvResolved> {
    Ok(RecvResolved {
        listen: a
            .listen
            .clone()
            .or_else(|| file.endpoint.addr.clone())
            .unwrap_or_else(|| DEFAULT_ADDR.to_string()),
        dest: a
            .dest
            .clone()
            .or_else(|| file.sink.dest.clone())
            .ok_or_else(|| Error::Config("no destination: pass --dest or set [sink] dest".into()))?,
        slots: positive(
            "slots",
            a.slots.or(file.sink.slots).unwrap_or(sink::DEFAULT_SINK_SLOTS),
        )?,
        write_workers: positive(
            "write workers",
            a.write_workers
                .or(file.sink.write_workers)
                .unwrap_or(sink::DEFAULT_WRITE_WORKERS),
        )?,
        sync_writes: a.sync_writes || file.sink.sync_writes.unwrap_or(false),
        sessions: a.sessions,
    })
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_manifest(path: &Path, object_size: u64, layout: &LayoutPolicy) -> Result<DatasetManifest> {
    if path.is_file() {
        let m = DatasetManifest::read_from(path)?;
        if m.object_size != object_size {
            return Err(Error::Config(format!(
                "manifest object size {} differs from --object-size {object_size}",
                m.object_size
            )));
        }
        Ok(m)
    } else {
        build_manifest(path, object_size, layout)
    }
}

fn cmd_recv(a: &RecvArgs) -> Result<i32> {
    let file = load_file_config(a.common.config.as_deref())?;
    let r = resolve_recv(a, &file)?;
    if a.common.print_config {
        print_json(&r)?;
        return Ok(EXIT_OK);
    }
    let listener = TcpListener::bind(&r.listen).map_err(|e| Error::Config(format!("bind {}: {e}", r.listen)))?;
    log::info!("listening on {}", listener.local_addr()?);
    let config = SinkConfig {
        slot_count: r.slots,
        write_workers: r.write_workers,
        sync_writes: r.sync_writes,
        ..SinkConfig::new(&r.dest)
    };
    for report in sink::serve(&listener, &config, r.sessions)? {
        eprintln!(
            "session {:016x}: {:?}, {} blocks written, {} files closed",
            report.session_id,
            report.outcome.unwrap_or(Outcome::Aborted),
            report.blocks_written,
            report.files_closed
        );
    }
    Ok(EXIT_OK)
}

fn cmd_send(a: &SendArgs) -> Result<i32> {
    let file = load_file_config(a.common.config.as_deref())?;
    let r = resolve_send(a, &file)?;
    if a.common.print_config {
        print_json(&r)?;
        return Ok(EXIT_OK);
    }
    let manifest = Arc::new(load_manifest(&r.source, r.object_size, &r.layout)?);
    let ft = r.ft.as_ref().map(FtResolved::to_config);
    // Refuse a mismatched resume before the sink sees a connection.
    if let Some(ft) = &ft {
        check_session(ft, &manifest, r.resume)?;
    }
    let conn = Connection::connect(&r.addr).map_err(|e| Error::ConnectionLost(format!("connect {}: {e}", r.addr)))?;
    let cfg = SourceConfig {
        workers: r.workers,
        slot_count: r.slots,
        max_retries: r.max_retries,
        resume: r.resume,
        ft,
        fault_at: r.fault_at,
        fault_action: FaultAction::ExitProcess(EXIT_FAULTED),
        ..SourceConfig::default()
    };
    let stats = transport::run_source(conn, manifest, &cfg)?;
    if let Some(path) = &r.metrics_out {
        let mut body = serde_json::to_vec_pretty(&stats)?;
        body.push(b'\n');
        std::fs::write(path, body).map_err(|e| Error::io_at(path, e))?;
    }
    eprintln!(
        "{:?}: {} blocks sent ({} bytes) in {:.3} s, {} files skipped, {} resumed",
        stats.outcome.unwrap_or(Outcome::Aborted),
        stats.blocks_sent,
        stats.bytes_sent,
        stats.seconds,
        stats.files_skipped,
        stats.files_resumed
    );
    Ok(EXIT_OK)
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let spec = match a.kind {
        WorkloadKind::Small => WorkloadSpec::small(a.scale.unwrap_or(0.05)),
        WorkloadKind::Big => WorkloadSpec::big(a.scale.unwrap_or(0.08), a.size_scale.unwrap_or(1.0 / 16.0)),
    }
    .with_seed(a.seed);
    let manifest = gen_workload(&spec, &a.out, DEFAULT_OBJECT_SIZE, &LayoutPolicy::default())?;
    if let Some(path) = &a.manifest {
        let bytes = manifest.to_json()?;
        std::fs::write(path, bytes).map_err(|e| Error::io_at(path, e))?;
    }
    eprintln!(
        "{}: {} files, {} bytes in {}",
        spec.name,
        manifest.files.len(),
        manifest.total_bytes(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct ExperimentResolved {
    kind: WorkloadKind,
    work_dir: PathBuf,
    fault_at: Vec<f64>,
    ft: Option<FtResolved>,
    workers: usize,
    slots: usize,
    ost_delay_ms: u64,
    matrix: bool,
    reps: usize,
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<i32> {
    let file = load_file_config(a.common.config.as_deref())?;
    let r = ExperimentResolved {
        kind: a.kind,
        work_dir: a.work_dir.clone(),
        fault_at: a.fault_at.clone(),
        ft: resolve_ft(&a.ft, &file.ft)?,
        workers: positive(
            "workers",
            a.workers.or(file.transfer.workers).unwrap_or(source::DEFAULT_WORKERS),
        )?,
        slots: positive("slots", a.slots.or(file.transfer.slots).unwrap_or(DESK_SLOT_COUNT))?,
        ost_delay_ms: a.ost_delay_ms.unwrap_or(DESK_OST_SERVICE_TIME.as_millis() as u64),
        matrix: a.matrix,
        reps: positive("reps", a.reps)?,
    };
    for &f in &r.fault_at {
        FaultPolicy::at(f).validate()?;
    }
    if a.common.print_config {
        print_json(&r)?;
        return Ok(EXIT_OK);
    }

    let spec = WorkloadSpec::desk(r.kind);
    let manifest = Arc::new(gen_workload(
        &spec,
        &r.work_dir.join("src"),
        DEFAULT_OBJECT_SIZE,
        &LayoutPolicy::default(),
    )?);
    manifest.write_to(&r.work_dir)?;
    let mut config = ExperimentConfig::new(&spec.name, r.work_dir.join("run"));
    config.workers = r.workers;
    config.slot_count = r.slots;
    config.ost_service_time = Duration::from_millis(r.ost_delay_ms);
    config.ft = r.ft.as_ref().map(|f| FtSettings {
        mechanism: f.mechanism,
        method: f.method,
        transaction_size: f.txn_size,
        fsync: f.fsync,
    });
    let mut metrics = match &a.metrics_out {
        Some(p) => MetricsLog::to_file(p)?,
        None => MetricsLog::in_memory(),
    };
    let mut exp = Experiment::new(manifest, config, &mut metrics)?;

    if r.matrix {
        let rows = exp.overhead_matrix(&FtSettings::all(), r.reps)?;
        if let Some(p) = &a.csv {
            write_overhead_csv(p, &rows)?;
        }
        for row in &rows {
            println!(
                "{:<18} {:>8.3} s {:>+7.2}% {:>8} B",
                row.label,
                row.mean_seconds,
                100.0 * row.overhead,
                row.log_space_peak
            );
        }
        return Ok(EXIT_OK);
    }

    let tt = exp.baseline()?.seconds;
    let mut failed = false;
    for &f in &r.fault_at {
        let rep = exp.run_recovery(Some(FaultPolicy::at(f)), tt)?;
        println!(
            "fault {:>3.0}%: TT {:.3} TBF {:.3} TAF {:.3} ER {:+.3} s, {} blocks retransmitted, {:?}",
            f * 100.0,
            rep.tt_t,
            rep.tbf_t,
            rep.taf_t,
            rep.er_t,
            rep.retransmitted_blocks,
            rep.status
        );
        failed |= rep.status == ExperimentStatus::Failed;
    }
    Ok(if failed { EXIT_MISMATCH } else { EXIT_OK })
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let manifest = build_manifest(&a.src, DEFAULT_OBJECT_SIZE, &LayoutPolicy::default())?;
    let mismatches = verify_dataset(&manifest, &a.dst, None)?;
    for m in &mismatches {
        println!("{:?}\t{}", m.kind, m.path);
    }
    if mismatches.is_empty() {
        eprintln!("{} files match", manifest.files.len());
        Ok(EXIT_OK)
    } else {
        eprintln!("{} of {} files differ", mismatches.len(), manifest.files.len());
        Ok(EXIT_MISMATCH)
    }
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => {
                    if !e.to_string().contains("Usage:") {
                        eprintln!("\n{}", Cli::command().render_usage());
                    }
                    EXIT_CONFIG
                }
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("OBJXFER_LOG")
        .try_init();

    let result = match &cli.command {
        Command::Recv(a) => cmd_recv(a),
        Command::Send(a) => cmd_send(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("objxfer: {e}");
            exit_code(&e)
        }
    }
}
