//! Experiment configuration, orchestration, and reporting.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, ReportFormat};
pub use report::{CellOutcome, ExperimentReport, ReportCell};
pub use runner::{prepare, run_attack_experiment, run_lda, run_scalability_sweep};
