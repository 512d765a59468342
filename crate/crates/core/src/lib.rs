//! Object-level transfer of file datasets between a source and a sink, with
//! per-block completion logging so an interrupted transfer resumes without
//! resending acknowledged blocks.

pub mod cli;
pub mod error;
pub mod ftlog;
pub mod harness;
pub mod layout;
pub mod recovery;
pub mod scheduler;
pub mod transport;

pub use error::{Error, Result};
