//! Shows the layout-aware scheduler working around a slow OST: objects on
//! healthy OSTs keep flowing while the congested one drains at its own pace.
//!
//! ```text
//! cargo run --example congestion_scheduling -- [slow_ost] [delay_ms]
//! ```

use std::sync::Arc;
use std::time::Duration;

use objxfer::ftlog::CompletedSet;
use objxfer::harness::{gen_workload, WorkloadSpec};
use objxfer::layout::{LayoutPolicy, MIB};
use objxfer::scheduler::TransferPlan;
use objxfer::transport::{transfer_local, SinkConfig, SourceConfig, TraceEvent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let slow: u32 = args.first().map_or(Ok(0), |s| s.parse())?;
    let delay_ms: u64 = args.get(1).map_or(Ok(40), |s| s.parse())?;
    let tmp = tempfile::tempdir()?;

    let policy = LayoutPolicy {
        stripe_count: 4,
        ..LayoutPolicy::default()
    };
    let spec = WorkloadSpec {
        name: "striped".into(),
        file_count: 4,
        file_size: 16 * MIB,
        seed: 5,
    };
    let manifest = Arc::new(gen_workload(&spec, &tmp.path().join("src"), MIB, &policy)?);

    let plan = TransferPlan::new(manifest.clone());
    for f in &manifest.files {
        plan.enqueue_file(f.file_id, &CompletedSet::new(manifest.object_count(f.file_id)))?;
    }
    println!("per-OST queues (file, block):");
    for ost in manifest.osts() {
        let q = plan.queue_snapshot(ost);
        println!("  OST {ost:>2}: {} objects, head {:?}", q.len(), &q[..q.len().min(4)]);
    }
    plan.shutdown();

    for congested in [false, true] {
        let cfg = SourceConfig {
            congestion: if congested {
                vec![(slow, Duration::from_millis(delay_ms))]
            } else {
                Vec::new()
            },
            trace: true,
            ..SourceConfig::default()
        };
        let sink = SinkConfig::new(tmp.path().join(format!("dest{}", congested as u8)));
        let (stats, _) = transfer_local(manifest.clone(), &cfg, &sink)?;
        // Position in the send order of the last block living on the slow OST.
        let blocks: Vec<(u32, u64)> = stats
            .trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Sent(_, Some(f), Some(k)) => Some((*f, *k)),
                _ => None,
            })
            .collect();
        let last_slow = blocks
            .iter()
            .rposition(|&(f, k)| manifest.ost_of(f, k).ok() == Some(slow))
            .unwrap_or(0);
        let backward = blocks.windows(2).filter(|w| w[0].0 == w[1].0 && w[1].1 < w[0].1).count();
        println!(
            "{}: {:.3} s, last OST {slow} block sent at position {} of {}, {} backward steps within a file",
            if congested { "congested" } else { "uniform  " },
            stats.seconds,
            last_slow + 1,
            blocks.len(),
            backward
        );
    }
    Ok(())
}
