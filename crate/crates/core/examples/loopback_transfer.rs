//! Sends a generated dataset to a sink over a loopback TCP socket with
//! completion logging on, then checks the copy by SHA-256.
//!
//! ```text
//! cargo run --release --example loopback_transfer -- [files] [file_mib]
//! ```

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use objxfer::ftlog::{FtLogConfig, LogMethod, LoggerMechanism};
use objxfer::harness::{gen_workload, WorkloadSpec};
use objxfer::layout::{LayoutPolicy, MIB};
use objxfer::recovery::verify_dataset;
use objxfer::transport::{serve, run_source, Connection, SinkConfig, SourceConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let files: u64 = args.first().map_or(Ok(32), |s| s.parse())?;
    let file_mib: u64 = args.get(1).map_or(Ok(4), |s| s.parse())?;
    let tmp = tempfile::tempdir()?;

    let spec = WorkloadSpec {
        name: "loopback".into(),
        file_count: files,
        file_size: file_mib * MIB,
        seed: 7,
    };
    let manifest = Arc::new(gen_workload(&spec, &tmp.path().join("src"), MIB, &LayoutPolicy::default())?);

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let dest = tmp.path().join("dest");
    let sink_cfg = SinkConfig::new(&dest);
    let sink = thread::spawn(move || serve(&listener, &sink_cfg, Some(1)));

    let cfg = SourceConfig {
        ft: Some(FtLogConfig::new(LoggerMechanism::Universal, LogMethod::Bit64, tmp.path().join(".ftlads"))),
        ..SourceConfig::default()
    };
    let stats = run_source(Connection::connect(addr)?, manifest.clone(), &cfg)?;
    let report = sink.join().expect("sink thread panicked")?.remove(0);

    println!(
        "{:?}: {} blocks, {:.1} MiB in {:.3} s ({:.0} MiB/s)",
        stats.outcome.unwrap(),
        stats.blocks_synced,
        stats.bytes_synced as f64 / MIB as f64,
        stats.seconds,
        stats.bytes_synced as f64 / MIB as f64 / stats.seconds
    );
    println!("log peak {} bytes, source pool peak {} slots", stats.log_space_peak, stats.pool_peak);
    println!("sink: {} files closed, pool peak {}", report.files_closed, report.pool_peak);
    for (kind, n) in &stats.messages_sent {
        println!("  {kind:<10} {n}");
    }
    let mismatches = verify_dataset(&manifest, &dest, None)?;
    println!("verify: {} mismatches", mismatches.len());
    Ok(())
}
