//! Experiment harness: evaluation metrics, multi-seed runs, bootstrap
//! aggregation, CSV reports and the `mavic` command line.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod verify;

pub use aggregate::{aggregate, Aggregate};
pub use config::{ExperimentSection, RunConfig, VerifySection};
pub use error::{HarnessError, Result};
pub use experiment::{evaluate, run_experiment, run_seed, EvalOptions, Evaluation, ExperimentResult, HistogramRow, ResultRow, SeedResult};
pub use verify::{run_verify, VerifySummary};
