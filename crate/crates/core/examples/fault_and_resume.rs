//! Interrupts a transfer halfway, shows what the completion logs hold, then
//! resumes and checks that only the missing blocks were sent again.
//!
//! ```text
//! cargo run --release --example fault_and_resume -- [mechanism] [method] [fault_at]
//! ```

use std::sync::Arc;

use objxfer::ftlog::{load_log, FtLogConfig, LogMethod, LoggerMechanism};
use objxfer::harness::{gen_workload, WorkloadSpec};
use objxfer::layout::{LayoutPolicy, MIB};
use objxfer::recovery::{classify, read_session, verify_dataset, FileStatus};
use objxfer::transport::sink::partial_marker;
use objxfer::transport::{transfer_local, SinkConfig, SourceConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mechanism: LoggerMechanism = args.first().map_or(Ok(LoggerMechanism::Transaction), |s| s.parse())?;
    let method: LogMethod = args.get(1).map_or(Ok(LogMethod::Bit8), |s| s.parse())?;
    let fault_at: f64 = args.get(2).map_or(Ok(0.5), |s| s.parse())?;
    let tmp = tempfile::tempdir()?;

    let spec = WorkloadSpec {
        name: "resume".into(),
        file_count: 12,
        file_size: 8 * MIB,
        seed: 11,
    };
    let manifest = Arc::new(gen_workload(&spec, &tmp.path().join("src"), MIB, &LayoutPolicy::default())?);
    let ft = FtLogConfig::new(mechanism, method, tmp.path().join(".ftlads"));
    let sink = SinkConfig::new(tmp.path().join("dest"));

    let mut cfg = SourceConfig {
        ft: Some(ft.clone()),
        fault_at: Some(fault_at),
        ..SourceConfig::default()
    };
    let (first, _) = transfer_local(manifest.clone(), &cfg, &sink)?;
    println!(
        "first run: {:?} after {} of {} blocks",
        first.outcome.unwrap(),
        first.blocks_synced,
        manifest.total_objects()
    );
    let session = read_session(&ft.ft_dir)?.expect("session record survives the fault");
    println!("session {:016x} pinned to manifest {}", session.session_id, &session.manifest_checksum[..16]);

    for f in &manifest.files {
        let total = manifest.object_count(f.file_id);
        // Same test the sink applies when it answers NEW_FILE.
        let dest = sink.dest_root.join(&f.path);
        let at_sink = dest.metadata().is_ok_and(|m| m.len() == f.size) && !partial_marker(&dest).exists();
        let status = classify(at_sink, load_log(&ft, f, total)?);
        let text = match &status {
            FileStatus::Partial(done) => format!("partial, {}/{} blocks logged", done.len(), total),
            other => format!("{other:?}"),
        };
        println!("  {:<12} {text}", f.path);
    }

    cfg.fault_at = None;
    cfg.resume = true;
    let (second, _) = transfer_local(manifest.clone(), &cfg, &sink)?;
    println!(
        "resume: {:?}, {} blocks sent, {} files skipped, {} continued from logs",
        second.outcome.unwrap(),
        second.blocks_sent,
        second.files_skipped,
        second.files_resumed
    );
    println!(
        "retransmitted {} blocks; session record left behind: {}",
        (first.blocks_sent + second.blocks_sent).saturating_sub(manifest.total_objects()),
        read_session(&ft.ft_dir)?.is_some()
    );
    println!("verify: {} mismatches", verify_dataset(&manifest, &sink.dest_root, None)?.len());
    Ok(())
}
