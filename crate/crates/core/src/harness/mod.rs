//! Monte Carlo experiments: configuration, seeded trial runner and reports.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{EstimatorSelection, ExperimentConfig, ToaMode};
pub use report::{aede, aede_by_estimator, aede_from_errors, summarize, sweep_report, Summary, SweepRow};
pub use runner::{run_experiment, EstimatorTag, Experiment, ExperimentOutput, ToaRecord, TrialResult};
