//! Workload generation, fault injection and measurement.

pub mod experiment;
pub mod metrics;
pub mod workload;

use serde::Serialize;

pub use experiment::{
    Experiment, ExperimentConfig, ExperimentStatus, FtSettings, RecoveryReport, DESK_OST_SERVICE_TIME, DESK_SLOT_COUNT,
};
pub use metrics::{write_overhead_csv, MetricsLog, OverheadRow, RunRecord};
pub use workload::{gen_workload, WorkloadKind, WorkloadSpec};

use crate::error::{Error, Result};

/// The canonical fault points.
pub const FAULT_POINTS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Stop the source once `trigger` of the dataset's bytes are acknowledged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultPolicy {
    pub trigger: f64,
}

impl FaultPolicy {
    pub fn at(trigger: f64) -> Self {
        FaultPolicy { trigger }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trigger > 0.0 && self.trigger < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("fault trigger {} outside (0, 1)", self.trigger)))
        }
    }
}
