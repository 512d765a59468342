//! Mean fault-free transfer time for ft-off and all 18 logger configurations,
//! written as CSV and JSON lines.
//!
//! ```text
//! cargo run --release --example overhead_matrix -- [big|small] [reps] [out_dir]
//! ```

use std::sync::Arc;

use objxfer::harness::{
    gen_workload, write_overhead_csv, Experiment, ExperimentConfig, FtSettings, MetricsLog, WorkloadKind,
    WorkloadSpec,
};
use objxfer::layout::{LayoutPolicy, MIB};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: WorkloadKind = args.first().map_or(Ok(WorkloadKind::Big), |s| s.parse())?;
    let reps: usize = args.get(1).map_or(Ok(5), |s| s.parse())?;
    let tmp = tempfile::tempdir()?;
    let out = args.get(2).map_or_else(|| tmp.path().to_path_buf(), Into::into);

    let spec = WorkloadSpec::desk(kind);
    let manifest = Arc::new(gen_workload(&spec, &out.join("src"), MIB, &LayoutPolicy::default())?);
    let config = ExperimentConfig::desk(&spec.name, out.join("run"));

    let mut metrics = MetricsLog::to_file(out.join("overhead.jsonl"))?;
    let rows = {
        let mut exp = Experiment::new(manifest, config, &mut metrics)?;
        exp.overhead_matrix(&FtSettings::all(), reps)?
    };
    write_overhead_csv(&out.join("overhead.csv"), &rows)?;

    println!("{:<18} {:>9} {:>9} {:>10}", "config", "mean s", "overhead", "log peak");
    for r in &rows {
        println!(
            "{:<18} {:>9.3} {:>8.2}% {:>10}",
            r.label,
            r.mean_seconds,
            100.0 * r.overhead,
            r.log_space_peak
        );
    }
    println!("wrote {}", out.join("overhead.csv").display());
    Ok(())
}
