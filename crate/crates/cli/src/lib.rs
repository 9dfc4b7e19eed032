//! Harness around the `modenorm` library: run configuration, training and
//! evaluation loops, sweeps, gate reports and MNCP checkpoints.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod train;

pub use config::{DataSource, RunConfig};
pub use error::{CliError, Result};
