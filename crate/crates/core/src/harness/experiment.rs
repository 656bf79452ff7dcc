//! Single experiment runs: truth, measurements, filter, diagnostics.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, Experiment, ExperimentConfig, InitialEstimate};
use crate::dynamics::{simulate_truth, DynamicsError, Trajectory, TrueState};
use crate::filter::{
    energy_at, error_state, filter_step, k_degeneracy, lyapunov_diagnostics, EstimatorState, FilterError,
};
use crate::liegroup::{exp_so3, Pose};
use crate::measurement::{make_measurement_frame, MeasurementError, MeasurementFrame, NoiseStreams};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("truth simulation failed: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("measurement synthesis failed at step {step}: {source}")]
    Measurement { step: usize, source: MeasurementError },
    #[error("filter failed at step {step}: {source}")]
    Filter { step: usize, source: FilterError },
    #[error("replay input: {0}")]
    Replay(String),
}

impl ExperimentError {
    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            ExperimentError::Filter {
                source: FilterError::NonConvergence { .. } | FilterError::NonFinite { .. },
                ..
            }
        )
    }
}

/// One row per time step, `i = 0..=N`. Row 0 has zero ΔV and zero iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub principal_angle: f64,
    pub x_norm: f64,
    /// `‖Ω − Ω̂‖`.
    pub omega_err_norm: f64,
    /// `‖v − v̂‖`.
    pub vel_err_norm: f64,
    pub u_rot: f64,
    pub u_trans: f64,
    pub t_kin: f64,
    pub v_total: f64,
    pub dv_direct: f64,
    pub dv_closed: f64,
    pub solver_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub principal_angle: f64,
    pub x_norm: f64,
    pub omega_err_norm: f64,
    pub vel_err_norm: f64,
}

impl ErrorStats {
    fn of(row: &DiagnosticRow) -> Self {
        ErrorStats {
            principal_angle: row.principal_angle,
            x_norm: row.x_norm,
            omega_err_norm: row.omega_err_norm,
            vel_err_norm: row.vel_err_norm,
        }
    }

    fn zero() -> Self {
        ErrorStats {
            principal_angle: 0.0,
            x_norm: 0.0,
            omega_err_norm: 0.0,
            vel_err_norm: 0.0,
        }
    }

    fn max(self, o: Self) -> Self {
        ErrorStats {
            principal_angle: self.principal_angle.max(o.principal_angle),
            x_norm: self.x_norm.max(o.x_norm),
            omega_err_norm: self.omega_err_norm.max(o.omega_err_norm),
            vel_err_norm: self.vel_err_norm.max(o.vel_err_norm),
        }
    }

    fn add(self, o: Self) -> Self {
        ErrorStats {
            principal_angle: self.principal_angle + o.principal_angle,
            x_norm: self.x_norm + o.x_norm,
            omega_err_norm: self.omega_err_norm + o.omega_err_norm,
            vel_err_norm: self.vel_err_norm + o.vel_err_norm,
        }
    }

    fn scale(self, s: f64) -> Self {
        ErrorStats {
            principal_angle: self.principal_angle * s,
            x_norm: self.x_norm * s,
            omega_err_norm: self.omega_err_norm * s,
            vel_err_norm: self.vel_err_norm * s,
        }
    }
}

/// Max and mean of the error norms over rows with `t >= t_start`.
pub fn window_stats(rows: &[DiagnosticRow], t_start: f64) -> (ErrorStats, ErrorStats) {
    let mut max = ErrorStats::zero();
    let mut sum = ErrorStats::zero();
    let mut n = 0usize;
    for r in rows.iter().filter(|r| r.t >= t_start - 1e-9) {
        let s = ErrorStats::of(r);
        max = max.max(s);
        sum = sum.add(s);
        n += 1;
    }
    (max, if n > 0 { sum.scale(1.0 / n as f64) } else { sum })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_steps: usize,
    pub final_errors: ErrorStats,
    pub window_start_s: f64,
    pub window_max: ErrorStats,
    pub window_mean: ErrorStats,
    pub iters_max: usize,
    pub iters_median: f64,
    pub iters_mean: f64,
    /// Steps where the closed-form ΔV is positive.
    pub dv_closed_violations: usize,
    pub max_dv_gap: f64,
    /// False when the visible beacon set changes during the run.
    pub fixed_observation_set: bool,
    /// Not serialized, so that written outputs stay deterministic.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl RunSummary {
    /// Equality of everything except the wall clock.
    pub fn same_statistics(&self, other: &RunSummary) -> bool {
        RunSummary {
            wall_clock_s: 0.0,
            ..self.clone()
        } == RunSummary {
            wall_clock_s: 0.0,
            ..other.clone()
        }
    }
}

pub fn median(values: &mut [usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2]) as f64
    }
}

pub fn summarize(
    rows: &[DiagnosticRow],
    window: f64,
    seed: u64,
    fixed_observation_set: bool,
    wall_clock_s: f64,
) -> RunSummary {
    let last = rows.last().expect("at least the initial row");
    let window_start = (last.t - window).max(rows[0].t);
    let (window_max, window_mean) = window_stats(rows, window_start);
    let mut iters: Vec<usize> = rows[1..].iter().map(|r| r.solver_iters).collect();
    let iters_mean = if iters.is_empty() {
        0.0
    } else {
        iters.iter().sum::<usize>() as f64 / iters.len() as f64
    };
    RunSummary {
        seed,
        n_steps: rows.len() - 1,
        final_errors: ErrorStats::of(last),
        window_start_s: window_start,
        window_max,
        window_mean,
        iters_max: iters.iter().copied().max().unwrap_or(0),
        iters_median: median(&mut iters),
        iters_mean,
        dv_closed_violations: rows.iter().filter(|r| r.dv_closed > 0.0).count(),
        max_dv_gap: rows[1..]
            .iter()
            .map(|r| (r.dv_direct - r.dv_closed).abs())
            .fold(0.0, f64::max),
        fixed_observation_set,
        wall_clock_s,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub seed: u64,
    pub truth: Trajectory,
    pub frames: Vec<MeasurementFrame>,
    pub estimates: Vec<EstimatorState>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub summary: RunSummary,
}

/// Initial filter state for the given truth and first frame.
pub fn initial_estimate(init: &InitialEstimate, truth0: &TrueState, frame0: &MeasurementFrame) -> EstimatorState {
    match *init {
        InitialEstimate::Absolute { pose, xi_hat } => EstimatorState::from_estimate(pose, xi_hat, frame0),
        InitialEstimate::Relative { q_err, x_err, phi } => {
            // Q = R R̂ᵀ and x = b − Q b̂
            let qt = exp_so3(&q_err).transpose();
            let r_hat = qt * truth0.pose.rot;
            let b_hat = qt.rotate(&(truth0.pose.trans - x_err));
            EstimatorState::from_phi(Pose::new(r_hat, b_hat), phi, frame0)
        }
    }
}

/// Synthesizes the measurement frame for every truth sample.
pub fn synthesize_frames(exp: &Experiment, truth: &Trajectory, seed: u64) -> Result<Vec<MeasurementFrame>, ExperimentError> {
    let noise = crate::measurement::NoiseSpec { seed, ..exp.noise };
    let mut streams = NoiseStreams::new(seed);
    let nb = exp.scene.beacons().len();
    truth
        .states
        .iter()
        .enumerate()
        .map(|(step, s)| {
            let visible = exp.visibility.visible_at(step, nb);
            make_measurement_frame(s, &exp.scene, &visible, &noise, exp.weights, &mut streams)
                .map_err(|source| ExperimentError::Measurement { step, source })
        })
        .collect()
}

/// Runs the filter over given truth and frames and collects diagnostics.
pub fn run_filter(
    exp: &Experiment,
    truth: Trajectory,
    frames: Vec<MeasurementFrame>,
    seed: u64,
) -> Result<ExperimentResult, ExperimentError> {
    let started = Instant::now();
    if frames.len() != truth.states.len() {
        return Err(ExperimentError::Replay(format!(
            "{} frames for {} truth samples",
            frames.len(),
            truth.states.len()
        )));
    }
    let fixed = exp.visibility.is_fixed();
    if !fixed {
        log::warn!("visible beacon set changes during the run; K and p̄ are recomputed per step and the fixed-observation assumption does not hold");
    }
    if let Some(ev) = k_degeneracy(&frames[0].k_matrix()) {
        log::warn!("K = DWDᵀ has a repeated eigenvalue {ev:?}; the attitude potential is not Morse");
    }

    let n = truth.n_steps();
    let mut estimates = Vec::with_capacity(n + 1);
    let mut rows = Vec::with_capacity(n + 1);
    let est0 = initial_estimate(&exp.init_estimate, &truth.states[0], &frames[0]);
    let mut err = error_state(&truth.states[0], &est0, frames[0].p_bar());
    let e0 = energy_at(&err, &frames[0].k_matrix(), &exp.gains);
    rows.push(row(&truth.states[0], &est0, &err, &e0, 0));
    estimates.push(est0);

    for i in 0..n {
        let (next, report) = filter_step(&estimates[i], &frames[i], &frames[i + 1], &exp.gains, exp.h, &exp.solver)
            .map_err(|source| ExperimentError::Filter { step: i + 1, source })?;
        let truth_next = &truth.states[i + 1];
        let err_next = error_state(truth_next, &next, frames[i + 1].p_bar());
        let e = lyapunov_diagnostics(&err, &err_next, &frames[i + 1].k_matrix(), &exp.gains);
        rows.push(row(truth_next, &next, &err_next, &e, report.iterations));
        estimates.push(next);
        err = err_next;
    }

    let summary = summarize(&rows, exp.summary_window, seed, fixed, started.elapsed().as_secs_f64());
    Ok(ExperimentResult {
        seed,
        truth,
        frames,
        estimates,
        diagnostics: rows,
        summary,
    })
}

fn row(
    truth: &TrueState,
    est: &EstimatorState,
    err: &crate::filter::ErrorState,
    e: &crate::filter::EnergyDiagnostics,
    iters: usize,
) -> DiagnosticRow {
    DiagnosticRow {
        t: truth.t,
        principal_angle: err.principal_angle,
        x_norm: err.x.norm(),
        omega_err_norm: (truth.xi.omega - est.xi_hat.omega).norm(),
        vel_err_norm: (truth.xi.vel - est.xi_hat.vel).norm(),
        u_rot: e.u_rot,
        u_trans: e.u_trans,
        t_kin: e.t_kin,
        v_total: e.v_total,
        dv_direct: e.delta_v_direct,
        dv_closed: e.delta_v_closed,
        solver_iters: iters,
    }
}

/// Simulates the truth, synthesizes measurements with `seed` and runs the filter.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentResult, ExperimentError> {
    let exp = cfg.resolve()?;
    run_resolved(&exp, seed)
}

pub fn run_resolved(exp: &Experiment, seed: u64) -> Result<ExperimentResult, ExperimentError> {
    let started = Instant::now();
    let truth = simulate_truth(&exp.init_truth, &exp.wrench, &exp.body, exp.h, exp.n_steps)?;
    let frames = synthesize_frames(exp, &truth, seed)?;
    let mut result = run_filter(exp, truth, frames, seed)?;
    result.summary.wall_clock_s = started.elapsed().as_secs_f64();
    log::info!(
        "seed {seed}: {} steps in {:.2} s, final angle {:.3e} rad, |x| {:.3e} m, iterations max {} median {}",
        result.summary.n_steps,
        result.summary.wall_clock_s,
        result.summary.final_errors.principal_angle,
        result.summary.final_errors.x_norm,
        result.summary.iters_max,
        result.summary.iters_median
    );
    Ok(result)
}
