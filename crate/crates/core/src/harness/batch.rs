//! Seeded Monte-Carlo batches.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Experiment, ExperimentConfig};
use super::experiment::{run_resolved, ExperimentError, ExperimentResult, RunSummary};

/// Caps the number of batch worker threads.
pub const THREADS_ENV: &str = "SE3VF_THREADS";

#[derive(Debug)]
pub struct BatchRun {
    pub seed: u64,
    pub outcome: Result<RunSummary, ExperimentError>,
    /// Full per-step results, kept only when requested.
    pub detail: Option<ExperimentResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Spread {
        let n = values.len() as f64;
        // shifted by the first value so identical inputs give an exact mean
        let x0 = values[0];
        let mean = x0 + values.iter().map(|v| v - x0).sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Spread {
            mean,
            max,
            std: var.sqrt(),
        }
    }
}

/// Statistics over the successful runs of a batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchAggregate {
    pub runs: usize,
    pub failures: usize,
    pub final_principal_angle: Spread,
    pub final_x_norm: Spread,
    pub window_max_principal_angle: Spread,
    pub window_max_x_norm: Spread,
    pub window_max_omega_err: Spread,
    pub window_max_vel_err: Spread,
    pub iters_max: usize,
    pub iters_median: Spread,
    pub dv_closed_violations: usize,
}

#[derive(Debug)]
pub struct BatchReport {
    /// Sorted by seed.
    pub runs: Vec<BatchRun>,
    /// `None` when every run failed.
    pub aggregate: Option<BatchAggregate>,
}

/// Aggregates summaries; the result does not depend on their order.
pub fn aggregate(summaries: &[&RunSummary], failures: usize) -> Option<BatchAggregate> {
    if summaries.is_empty() {
        return None;
    }
    let mut sorted: Vec<&RunSummary> = summaries.to_vec();
    sorted.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.final_errors.principal_angle.total_cmp(&b.final_errors.principal_angle))
    });
    let col = |f: &dyn Fn(&RunSummary) -> f64| Spread::of(&sorted.iter().map(|s| f(s)).collect::<Vec<_>>());
    Some(BatchAggregate {
        runs: sorted.len(),
        failures,
        final_principal_angle: col(&|s| s.final_errors.principal_angle),
        final_x_norm: col(&|s| s.final_errors.x_norm),
        window_max_principal_angle: col(&|s| s.window_max.principal_angle),
        window_max_x_norm: col(&|s| s.window_max.x_norm),
        window_max_omega_err: col(&|s| s.window_max.omega_err_norm),
        window_max_vel_err: col(&|s| s.window_max.vel_err_norm),
        iters_max: sorted.iter().map(|s| s.iters_max).max().unwrap_or(0),
        iters_median: col(&|s| s.iters_median),
        dv_closed_violations: sorted.iter().map(|s| s.dv_closed_violations).sum(),
    })
}

fn thread_cap() -> Option<usize> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            log::warn!("ignoring {THREADS_ENV}={raw:?}; expected a positive integer");
            None
        }
    }
}

/// Runs every seed in parallel. Failures are recorded per seed.
pub fn run_batch(cfg: &ExperimentConfig, seeds: &[u64], retain: bool) -> Result<BatchReport, ExperimentError> {
    let exp = cfg.resolve()?;
    Ok(run_batch_resolved(&exp, seeds, retain))
}

pub fn run_batch_resolved(exp: &Experiment, seeds: &[u64], retain: bool) -> BatchReport {
    let work = || {
        seeds
            .par_iter()
            .map(|&seed| match run_resolved(exp, seed) {
                Ok(r) => BatchRun {
                    seed,
                    outcome: Ok(r.summary.clone()),
                    detail: retain.then_some(r),
                },
                Err(e) => {
                    log::error!("seed {seed} failed: {e}");
                    BatchRun {
                        seed,
                        outcome: Err(e),
                        detail: None,
                    }
                }
            })
            .collect::<Vec<_>>()
    };
    let mut runs = match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(work),
            Err(e) => {
                log::warn!("could not build a {n}-thread pool ({e}); using the global pool");
                work()
            }
        },
        None => work(),
    };
    runs.sort_by_key(|r| r.seed);
    let ok: Vec<&RunSummary> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let failures = runs.len() - ok.len();
    let aggregate = aggregate(&ok, failures);
    BatchReport { runs, aggregate }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::paper_sec6();
        cfg.duration_s = 1.0;
        cfg.summary_window_s = 0.5;
        cfg
    }

    #[test]
    fn single_seed_aggregate_is_that_run() {
        let rep = run_batch(&short(), &[7], false).unwrap();
        let s = rep.runs[0].outcome.as_ref().unwrap();
        let agg = rep.aggregate.unwrap();
        assert_eq!(agg.runs, 1);
        assert_eq!(agg.final_principal_angle.mean, s.final_errors.principal_angle);
        assert_eq!(agg.final_principal_angle.max, s.final_errors.principal_angle);
        assert_eq!(agg.window_max_x_norm.mean, s.window_max.x_norm);
        assert_eq!(agg.iters_max, s.iters_max);
    }

    #[test]
    fn identical_seeds_have_zero_spread() {
        let rep = run_batch(&short(), &[4, 4, 4], false).unwrap();
        let agg = rep.aggregate.unwrap();
        assert_eq!(agg.runs, 3);
        assert_eq!(agg.final_x_norm.std, 0.0);
        assert_eq!(agg.window_max_principal_angle.std, 0.0);
        assert_eq!(agg.iters_median.std, 0.0);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let cfg = short();
        let a = run_batch(&cfg, &[1, 2, 3, 4], false).unwrap();
        let b = run_batch(&cfg, &[3, 1, 4, 2], false).unwrap();
        assert_eq!(a.aggregate, b.aggregate);
        let seeds: Vec<u64> = b.runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![1, 2, 3, 4]);

        let mut s: Vec<RunSummary> = a.runs.iter().map(|r| r.outcome.as_ref().unwrap().clone()).collect();
        let fwd = aggregate(&s.iter().collect::<Vec<_>>(), 0);
        s.reverse();
        let rev = aggregate(&s.iter().collect::<Vec<_>>(), 0);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn failures_do_not_abort_the_batch() {
        let mut cfg = short();
        cfg.solver.max_iter = 1;
        let rep = run_batch(&cfg, &[1, 2], true).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert!(rep.runs.iter().all(|r| r.outcome.is_err() && r.detail.is_none()));
        assert!(rep.aggregate.is_none());
    }

    #[test]
    fn retained_details_match_summaries() {
        let rep = run_batch(&short(), &[9], true).unwrap();
        let run = &rep.runs[0];
        let detail = run.detail.as_ref().unwrap();
        assert!(detail.summary.same_statistics(run.outcome.as_ref().unwrap()));
    }
}
