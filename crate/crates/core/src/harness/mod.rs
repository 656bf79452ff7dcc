//! Experiment harness: configuration, runs, batches, output and replay.

pub mod batch;
pub mod config;
pub mod experiment;
pub mod output;
pub mod replay;

pub use batch::{run_batch, BatchAggregate, BatchReport, BatchRun};
pub use config::{load_config, save_config, ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, DiagnosticRow, ExperimentError, ExperimentResult, RunSummary};
pub use output::{emit_outputs, OutputError};
pub use replay::replay;
