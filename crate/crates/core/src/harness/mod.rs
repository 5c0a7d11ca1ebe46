//! Configuration, runs, sweeps and reports.

pub mod config;
pub mod defaults;
pub mod manifest;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{GridPoint, RunConfig, StudyKind, SweepSpec};
pub use manifest::{MetricsRow, RunManifest, RunStatus};
