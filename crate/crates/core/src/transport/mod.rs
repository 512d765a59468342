//! Source/sink transfer protocol.

pub mod conn;
pub mod pool;
pub mod sink;
pub mod source;
pub mod wire;

use std::path::Path;
use std::sync::Arc;
use std::thread;

use serde::Serialize;

pub use conn::Connection;
pub use pool::{BufferPool, Slot};
pub use sink::{serve, serve_session, SinkConfig, SinkHooks, SinkReport};
pub use source::{run_source, FaultAction, SourceConfig, TransferStats};
pub use wire::{MessageKind, SyncStatus, TransferMessage};

use crate::error::Result;
use crate::layout::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Completed,
    /// The source stopped itself at the configured fault point.
    Faulted,
    /// The peer went away without BYE.
    Aborted,
}

/// One step seen by the source, in the order it happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    /// Frame written: kind, file id, block index.
    Sent(MessageKind, Option<u32>, Option<u64>),
    Received(MessageKind, Option<u32>, Option<u64>),
    /// Completion record written for (file id, block index).
    Logged(u32, u64),
}

/// Runs a sink on a background thread and a source on this one, connected by
/// a socket pair. Both sides' results are returned.
pub fn transfer_local(
    manifest: Arc<DatasetManifest>,
    source: &SourceConfig,
    sink: &SinkConfig,
) -> Result<(TransferStats, SinkReport)> {
    let (a, b) = Connection::pair()?;
    let sink_cfg = sink.clone();
    let handle = thread::Builder::new()
        .name("sink".into())
        .spawn(move || serve_session(b, &sink_cfg))?;
    let stats = run_source(a, manifest, source);
    let report = handle.join().expect("sink thread panicked");
    let stats = stats?;
    Ok((stats, report?))
}

/// Same as [`transfer_local`] with a sink writing under `dest` and default settings elsewhere.
pub fn copy_dataset(manifest: Arc<DatasetManifest>, dest: &Path, source: &SourceConfig) -> Result<TransferStats> {
    transfer_local(manifest, source, &SinkConfig::new(dest)).map(|(s, _)| s)
}
