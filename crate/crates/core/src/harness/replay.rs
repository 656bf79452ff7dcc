//! Re-running the filter from a recorded run directory.

use std::path::Path;

use super::config::ExperimentConfig;
use super::experiment::{run_filter, ExperimentError, ExperimentResult};
use super::output::{read_measurements_csv, read_truth_csv, MEASUREMENTS_FILE, TRUTH_FILE};

/// Reads `truth.csv` and `measurements.csv` from `dir` and runs the filter
/// configured by `cfg` on them. The truth is only used for diagnostics.
pub fn replay(cfg: &ExperimentConfig, dir: &Path, seed: u64) -> Result<ExperimentResult, ExperimentError> {
    let exp = cfg.resolve()?;
    let bad = |e: super::output::OutputError| ExperimentError::Replay(e.to_string());
    let truth = read_truth_csv(&dir.join(TRUTH_FILE), exp.h).map_err(bad)?;
    let frames = read_measurements_csv(&dir.join(MEASUREMENTS_FILE), exp.weights).map_err(bad)?;
    if truth.n_steps() != exp.n_steps {
        log::warn!(
            "recorded run has {} steps but the config asks for {}; replaying the recording",
            truth.n_steps(),
            exp.n_steps
        );
    }
    run_filter(&exp, truth, frames, seed)
}
