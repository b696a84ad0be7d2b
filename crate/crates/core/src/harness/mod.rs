//! Experiment configuration, the trial runner, invariant audits and the
//! normality check used by the command-line tool.

pub mod audit;
pub mod config;
pub mod ks;
pub mod runner;

pub use audit::{audit, AuditEntry, AuditReport};
pub use config::{ExperimentConfig, Overrides};
pub use ks::{ks_from_csv, ks_statistic, KsResult};
pub use runner::{run_experiment, write_outputs, ExperimentResult};
