//! Baseline, fault and resume at the four canonical fault points; prints
//! TT/TBF/TAF/ER and retransmitted blocks for each.
//!
//! ```text
//! cargo run --release --example recovery_experiment -- [big|small] [mechanism] [method] [work_dir]
//! ```
//!
//! Defaults: big workload, universal logger, bit64, a fresh temp directory.

use std::sync::Arc;

use objxfer::ftlog::{LogMethod, LoggerMechanism};
use objxfer::harness::{
    gen_workload, Experiment, ExperimentConfig, FaultPolicy, FtSettings, MetricsLog, WorkloadKind, WorkloadSpec,
    FAULT_POINTS,
};
use objxfer::layout::{LayoutPolicy, MIB};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: WorkloadKind = args.first().map_or(Ok(WorkloadKind::Big), |s| s.parse())?;
    let mechanism: LoggerMechanism = args.get(1).map_or(Ok(LoggerMechanism::Universal), |s| s.parse())?;
    let method: LogMethod = args.get(2).map_or(Ok(LogMethod::Bit64), |s| s.parse())?;
    let tmp = tempfile::tempdir()?;
    let work = args.get(3).map_or_else(|| tmp.path().to_path_buf(), Into::into);

    let spec = WorkloadSpec::desk(kind);
    println!("generating {} files of {} MiB", spec.file_count, spec.file_size / MIB);
    let manifest = Arc::new(gen_workload(&spec, &work.join("src"), MIB, &LayoutPolicy::default())?);

    let mut config = ExperimentConfig::desk(&spec.name, work.join("run"));
    config.ft = Some(FtSettings::new(mechanism, method));
    let mut metrics = MetricsLog::in_memory();
    let mut exp = Experiment::new(manifest, config, &mut metrics)?;

    let tt = exp.baseline()?.seconds;
    println!("TT = {tt:.3} s");
    println!("{:>6} {:>8} {:>8} {:>8} {:>7} {:>6} {:>8}", "fault", "TBF", "TAF", "ER", "ER/TT", "retx", "status");
    for p in FAULT_POINTS {
        let r = exp.run_recovery(Some(FaultPolicy::at(p)), tt)?;
        println!(
            "{:>5.0}% {:>8.3} {:>8.3} {:>8.3} {:>6.1}% {:>6} {:>8?}",
            p * 100.0,
            r.tbf_t,
            r.taf_t,
            r.er_t,
            100.0 * r.er_t / tt,
            r.retransmitted_blocks,
            r.status
        );
        for d in &r.diagnostics {
            println!("       {d}");
        }
    }
    Ok(())
}
