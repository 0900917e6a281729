//! Configuration-driven experiment runner.
//!
//! Each experiment writes per-group directories holding averaged traces,
//! per-trial raw files and check reports, plus `manifest.txt`,
//! `config.resolved`, `report.csv` and `diagnostics.csv` at the top level.

mod aggregate;
mod config;
mod run;

pub use aggregate::{average_series, average_svals, average_trials, Averaged, TrialTrace};
pub use config::{Experiment, ExperimentConfig, KEYS};
pub use run::{read_column, run, RunManifest, RunOutcome, ARTIFACT_VERSION};
