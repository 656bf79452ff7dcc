//! The variational pose filter.
//!
//! The filter state is `(ĝ, ξ̂, φ)` where `φ = ξᵐ − ξ̂` is the velocity
//! estimation error. One step solves the implicit system
//!
//! ```text
//! φᵢ₊₁ = ((m − l) φᵢ − h Zᵢ) / (m + l)
//! ξ̂ᵢ₊₁ = ξᵐᵢ₊₁ − φᵢ₊₁
//! ĝᵢ₊₁ = step_pose(ĝᵢ, ξ̂ᵢ, ξ̂ᵢ₊₁, h)
//! ```
//!
//! where `Zᵢ` depends on `ĝᵢ₊₁` through `yᵢ₊₁` and `R̂ᵢ₊₁`. Everything is
//! evaluated from measurements only; the truth enters solely through
//! [`error_state`] and [`lyapunov_diagnostics`].

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{step_pose, TrueState};
use crate::liegroup::{
    exp_so3, hat, principal_angle, GeneralizedVelocity, Mat3, Pose, Rotation, Vec3, Vec6,
};
use crate::measurement::{s_gamma_from, weighted_outer, DirMatrix, MeasurementError, MeasurementFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("fixed-point solve did not converge after {iterations} iterations (last |Δφ| = {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("fixed-point solve produced a non-finite iterate at iteration {iterations}")]
    NonFinite { iterations: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

/// Scalar gains: kinetic `m`, dissipation `l`, rotational `k_p`, translational `κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorGains {
    pub m_gain: f64,
    pub l_gain: f64,
    pub k_p: f64,
    pub kappa: f64,
}

impl EstimatorGains {
    pub fn paper() -> Self {
        EstimatorGains {
            m_gain: 1.5,
            l_gain: 0.1,
            k_p: 150.0,
            kappa: 100.0,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        for (name, v) in [
            ("m", self.m_gain),
            ("l", self.l_gain),
            ("k_p", self.k_p),
            ("kappa", self.kappa),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FilterError::InvalidGains(format!("{name} must be positive, got {v}")));
            }
        }
        if self.l_gain == self.m_gain {
            return Err(FilterError::InvalidGains("l must differ from m".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub g_hat: Pose,
    pub xi_hat: GeneralizedVelocity,
    pub phi: GeneralizedVelocity,
    pub t: f64,
}

impl EstimatorState {
    /// Initial state from a velocity estimate: `φ₀ = ξᵐ₀ − ξ̂₀`.
    pub fn from_estimate(g_hat: Pose, xi_hat: GeneralizedVelocity, frame: &MeasurementFrame) -> Self {
        EstimatorState {
            g_hat,
            xi_hat,
            phi: *frame.xi_m() - xi_hat,
            t: frame.t(),
        }
    }

    /// Initial state from a velocity error: `ξ̂₀ = ξᵐ₀ − φ₀`.
    pub fn from_phi(g_hat: Pose, phi: GeneralizedVelocity, frame: &MeasurementFrame) -> Self {
        EstimatorState {
            g_hat,
            xi_hat: *frame.xi_m() - phi,
            phi,
            t: frame.t(),
        }
    }
}

fn check_dims(d: &DirMatrix, l_m: &DirMatrix, w: &DVector<f64>) -> Result<(), FilterError> {
    if d.ncols() != l_m.ncols() || d.ncols() != w.len() {
        return Err(FilterError::Dimension(format!(
            "D has {} columns, Lᵐ {}, W {}",
            d.ncols(),
            l_m.ncols(),
            w.len()
        )));
    }
    Ok(())
}

/// Wahba-type rotational potential `(k_p/2)⟨D − R̂Lᵐ, (D − R̂Lᵐ)W⟩`.
pub fn potential_rotational(
    r_hat: &Rotation,
    d: &DirMatrix,
    l_m: &DirMatrix,
    w: &DVector<f64>,
    k_p: f64,
) -> Result<f64, FilterError> {
    check_dims(d, l_m, w)?;
    let r = r_hat.matrix();
    let sum: f64 = d
        .column_iter()
        .zip(l_m.column_iter())
        .zip(w.iter())
        .map(|((dj, lj), wj)| wj * (dj - r * lj).norm_squared())
        .sum();
    Ok(0.5 * k_p * sum)
}

/// `κ‖y‖²` with `y = p̄ − R̂āᵐ − b̂`; returns `(energy, y)`.
pub fn potential_translational(
    r_hat: &Rotation,
    b_hat: &Vec3,
    a_bar_m: &Vec3,
    p_bar: &Vec3,
    kappa: f64,
) -> (f64, Vec3) {
    let y = p_bar - r_hat.rotate(a_bar_m) - b_hat;
    (kappa * y.norm_squared(), y)
}

fn residual_y(g_hat: &Pose, frame: &MeasurementFrame) -> Vec3 {
    frame.p_bar() - g_hat.rot.rotate(frame.a_bar_m()) - g_hat.trans
}

/// Two-point kinetic energy `(m/2)|φa + φb|²`.
pub fn kinetic_energy(phi_a: &GeneralizedVelocity, phi_b: &GeneralizedVelocity, m_gain: f64) -> f64 {
    0.5 * m_gain * (*phi_a + *phi_b).norm_squared()
}

/// Single-point kinetic term `(m/2)|φ|²` used by the Lyapunov function.
pub fn kinetic_energy_l(phi: &GeneralizedVelocity, m_gain: f64) -> f64 {
    0.5 * m_gain * phi.norm_squared()
}

/// Discrete Lagrangian per step and the action sum `h Σ ℒᵢ`.
///
/// `ℒᵢ` needs `φᵢ₊₁`, so a sequence of `N + 1` states yields `N` terms.
/// Diagnostic only; the filter update never evaluates it.
pub fn lagrangian_and_action(
    frames: &[MeasurementFrame],
    states: &[EstimatorState],
    gains: &EstimatorGains,
    h: f64,
) -> Result<(Vec<f64>, f64), FilterError> {
    if frames.len() != states.len() {
        return Err(FilterError::Dimension(format!(
            "{} frames but {} states",
            frames.len(),
            states.len()
        )));
    }
    let mut terms = Vec::with_capacity(states.len().saturating_sub(1));
    for i in 0..states.len().saturating_sub(1) {
        let (s, f) = (&states[i], &frames[i]);
        let t = kinetic_energy(&s.phi, &states[i + 1].phi, gains.m_gain);
        let ur = potential_rotational(&s.g_hat.rot, f.d(), f.l_m(), f.weights(), gains.k_p)?;
        let (ut, _) = potential_translational(&s.g_hat.rot, &s.g_hat.trans, f.a_bar_m(), f.p_bar(), gains.kappa);
        terms.push(t - ur - ut);
    }
    let action = h * terms.iter().sum::<f64>();
    Ok((terms, action))
}

/// `S_Γ(R̂) = vex(ΓᵀR̂ − R̂ᵀΓ)` with `Γ = D W Lᵐᵀ`.
pub fn s_gamma(
    d: &DirMatrix,
    w: &DVector<f64>,
    l_m: &DirMatrix,
    r_hat: &Rotation,
) -> Result<Vec3, FilterError> {
    check_dims(d, l_m, w)?;
    Ok(s_gamma_from(&weighted_outer(d, w, l_m), r_hat))
}

fn stack(top: Vec3, bottom: Vec3) -> Vec6 {
    Vec6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// `Zᵢ` in measurement form:
///
/// ```text
/// [ −k_p S_Γᵢ(R̂ᵢ) + κ (āᵢᵐ)^× R̂ᵢᵀ (yᵢ₊₁ + yᵢ) ]
/// [ κ R̂ᵢ₊₁ᵀ (yᵢ₊₁ + yᵢ)                        ]
/// ```
pub fn z_vector(
    state_i: &EstimatorState,
    state_ip1: &EstimatorState,
    frame_i: &MeasurementFrame,
    frame_ip1: &MeasurementFrame,
    gains: &EstimatorGains,
) -> Vec6 {
    let part = ZFixedPart::new(state_i, frame_i, gains);
    part.eval(&state_ip1.g_hat, &residual_y(&state_ip1.g_hat, frame_ip1))
}

/// The parts of `Zᵢ` that do not depend on the step-(i+1) estimate.
struct ZFixedPart {
    rot_top: Vec3,
    coupling: Mat3,
    y_i: Vec3,
    kappa: f64,
}

impl ZFixedPart {
    fn new(state_i: &EstimatorState, frame_i: &MeasurementFrame, gains: &EstimatorGains) -> Self {
        let r_i = &state_i.g_hat.rot;
        ZFixedPart {
            rot_top: -gains.k_p * frame_i.s_gamma(r_i),
            coupling: hat(frame_i.a_bar_m()) * r_i.matrix().transpose() * gains.kappa,
            y_i: residual_y(&state_i.g_hat, frame_i),
            kappa: gains.kappa,
        }
    }

    fn eval(&self, g_next: &Pose, y_next: &Vec3) -> Vec6 {
        let ysum = y_next + self.y_i;
        stack(
            self.rot_top + self.coupling * ysum,
            g_next.rot.transpose().rotate(&ysum) * self.kappa,
        )
    }
}

/// `Z′ᵢ` exactly as written in the variational filter:
///
/// ```text
/// [ −k_p S_Γᵢ₊₁(R̂ᵢ₊₁) + m (v̂ᵢ₊₁ + vᵢ)^× (vᵢ₊₁ + vᵢ) + κ (āᵐᵢ₊₁)^× R̂ᵢ₊₁ᵀ yᵢ₊₁ ]
/// [ κ R̂ᵢ₊₁ᵀ yᵢ₊₁                                                          ]
/// ```
///
/// `vᵢ` here is the translational velocity *error* (bottom half of φᵢ),
/// `v̂ᵢ₊₁` the translational velocity estimate.
pub fn z_prime_vector(
    state_i: &EstimatorState,
    state_ip1: &EstimatorState,
    frame_ip1: &MeasurementFrame,
    gains: &EstimatorGains,
) -> Vec6 {
    let r = &state_ip1.g_hat.rot;
    let y = residual_y(&state_ip1.g_hat, frame_ip1);
    let rt_y = r.transpose().rotate(&y);
    let transport = state_ip1.xi_hat.vel + state_i.phi.vel;
    let v_err_sum = state_ip1.phi.vel + state_i.phi.vel;
    let top = -gains.k_p * frame_ip1.s_gamma(r)
        + gains.m_gain * transport.cross(&v_err_sum)
        + gains.kappa * frame_ip1.a_bar_m().cross(&rt_y);
    stack(top, rt_y * gains.kappa)
}

/// Applies `exp_so3(v)` to both 3-vector halves of `x`.
pub fn exp_block(v: &Vec3, x: &Vec6) -> Vec6 {
    let e = exp_so3(v);
    let top = e.rotate(&x.fixed_rows::<3>(0).into_owned());
    let bottom = e.rotate(&x.fixed_rows::<3>(3).into_owned());
    stack(top, bottom)
}

/// Dissipation term that turns the general variational update into the
/// asymptotically stable recursion:
///
/// ```text
/// η = (2/h){ m(φᵢ₊₁ + φᵢ) − (h/2)Z′ − (m/(m+l)) E [2mφᵢ₊₁ − hZᵢ₊₁] },
/// E = exp_block((h/2)(Ω̂ᵢ₊₂ + Ω̂ᵢ₊₁))
/// ```
pub fn dissipation_eta(
    phi_i: &GeneralizedVelocity,
    phi_ip1: &GeneralizedVelocity,
    z_prime: &Vec6,
    z_ip1: &Vec6,
    omega_hat_sum_ip2: &Vec3,
    gains: &EstimatorGains,
    h: f64,
) -> Vec6 {
    let m = gains.m_gain;
    let l = gains.l_gain;
    let target = phi_ip1.to_vec6() * (2.0 * m) - z_ip1 * h;
    let transported = exp_block(&(omega_hat_sum_ip2 * (0.5 * h)), &target);
    ((*phi_ip1 + *phi_i).to_vec6() * m - z_prime * (0.5 * h) - transported * (m / (m + l))) * (2.0 / h)
}

/// General variational update, solved for `φᵢ₊₂`:
///
/// `φᵢ₊₂ + φᵢ₊₁ = exp_block(−(h/2)(Ω̂ᵢ₊₂ + Ω̂ᵢ₊₁)) [(φᵢ₊₁ + φᵢ) − (h/2m)Z′ − (h/2m)η]`.
pub fn variational_update_general(
    phi_i: &GeneralizedVelocity,
    phi_ip1: &GeneralizedVelocity,
    z_prime: &Vec6,
    eta: &Vec6,
    omega_hat_sum_ip2: &Vec3,
    gains: &EstimatorGains,
    h: f64,
) -> GeneralizedVelocity {
    let c = h / (2.0 * gains.m_gain);
    let inner = (*phi_ip1 + *phi_i).to_vec6() - z_prime * c - eta * c;
    let sum = exp_block(&(omega_hat_sum_ip2 * (-0.5 * h)), &inner);
    GeneralizedVelocity::from_vec6(&sum) - *phi_ip1
}

/// `φᵢ₊₁ = ((m − l)φᵢ − hZᵢ)/(m + l)`.
pub fn recursion_step(phi_i: &GeneralizedVelocity, z_i: &Vec6, gains: &EstimatorGains, h: f64) -> GeneralizedVelocity {
    let m = gains.m_gain;
    let l = gains.l_gain;
    GeneralizedVelocity::from_vec6(&((phi_i.to_vec6() * (m - l) - z_i * h) / (m + l)))
}

/// Fixed-point solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop when the update `‖Δφ‖` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation factor; halved whenever the residual grows.
    pub damping: f64,
    /// Scale the relaxation by `2/(2 + ρ̂)`, where `ρ̂` estimates the spectral
    /// radius of the fixed-point map (its Jacobian is negative semidefinite).
    pub spectral_relaxation: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-12,
            max_iter: 100,
            damping: 1.0,
            spectral_relaxation: true,
        }
    }
}

/// What one implicit solve did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    /// Norm of the last update.
    pub residual: f64,
    /// Relaxation factor in effect at exit.
    pub relaxation: f64,
}

/// Spectral radius estimate of the fixed-point map `φᵢ₊₁ ↦ recursion(Zᵢ(φᵢ₊₁))`.
fn contraction_estimate(frame_ip1: &MeasurementFrame, gains: &EstimatorGains, h: f64) -> f64 {
    h * h * gains.kappa * (1.0 + frame_ip1.a_bar_m().norm_squared()) / (2.0 * (gains.m_gain + gains.l_gain))
}

/// One implicit filter step from `state_i` to `t_{i+1}`.
///
/// Damped fixed-point iteration on `φᵢ₊₁`, initialized at `φᵢ`.
pub fn filter_step(
    state_i: &EstimatorState,
    frame_i: &MeasurementFrame,
    frame_ip1: &MeasurementFrame,
    gains: &EstimatorGains,
    h: f64,
    solver: &SolverConfig,
) -> Result<(EstimatorState, StepReport), FilterError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(FilterError::InvalidStep(h));
    }
    let fixed = ZFixedPart::new(state_i, frame_i, gains);
    let xi_m_next = *frame_ip1.xi_m();
    let propagate = |phi_next: &GeneralizedVelocity| {
        let xi_hat_next = xi_m_next - *phi_next;
        let g_next = step_pose(&state_i.g_hat, &state_i.xi_hat, &xi_hat_next, h);
        (g_next, xi_hat_next)
    };

    let mut alpha = solver.damping;
    if solver.spectral_relaxation {
        alpha *= 2.0 / (2.0 + contraction_estimate(frame_ip1, gains, h));
    }
    let mut phi = state_i.phi;
    let mut prev_residual = f64::INFINITY;
    let mut update = f64::INFINITY;
    for k in 1..=solver.max_iter {
        let (g_next, _) = propagate(&phi);
        let z = fixed.eval(&g_next, &residual_y(&g_next, frame_ip1));
        let mapped = recursion_step(&state_i.phi, &z, gains, h);
        let delta = mapped - phi;
        let residual = delta.norm();
        if !residual.is_finite() {
            return Err(FilterError::NonFinite { iterations: k });
        }
        if residual > prev_residual {
            alpha *= 0.5;
        }
        prev_residual = residual;
        let step = delta * alpha;
        phi = phi + step;
        update = step.norm();
        if update < solver.tol {
            let (g_hat, xi_hat) = propagate(&phi);
            let next = EstimatorState {
                g_hat,
                xi_hat,
                phi,
                t: frame_ip1.t(),
            };
            return Ok((
                next,
                StepReport {
                    iterations: k,
                    residual: update,
                    relaxation: alpha,
                },
            ));
        }
    }
    Err(FilterError::NonConvergence {
        iterations: solver.max_iter,
        residual: update,
    })
}

/// Stateful wrapper that remembers the previous frame.
#[derive(Debug, Clone)]
pub struct PoseFilter {
    gains: EstimatorGains,
    h: f64,
    solver: SolverConfig,
    state: EstimatorState,
    frame: MeasurementFrame,
}

impl PoseFilter {
    pub fn new(
        gains: EstimatorGains,
        h: f64,
        solver: SolverConfig,
        initial: EstimatorState,
        frame0: MeasurementFrame,
    ) -> Result<Self, FilterError> {
        gains.validate()?;
        if !(h.is_finite() && h > 0.0) {
            return Err(FilterError::InvalidStep(h));
        }
        Ok(PoseFilter {
            gains,
            h,
            solver,
            state: initial,
            frame: frame0,
        })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn frame(&self) -> &MeasurementFrame {
        &self.frame
    }

    pub fn step(&mut self, frame_next: MeasurementFrame) -> Result<StepReport, FilterError> {
        let (next, report) = filter_step(&self.state, &self.frame, &frame_next, &self.gains, self.h, &self.solver)?;
        self.state = next;
        self.frame = frame_next;
        Ok(report)
    }
}

/// Pose and velocity estimation errors against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    /// Attitude error `Q = R R̂ᵀ`.
    pub q: Rotation,
    /// Position error `x = b − Q b̂`.
    pub x: Vec3,
    /// `y = Qᵀx + (I − Qᵀ)p̄`.
    pub y: Vec3,
    pub phi: GeneralizedVelocity,
    pub principal_angle: f64,
}

pub fn error_state(truth: &TrueState, est: &EstimatorState, p_bar: &Vec3) -> ErrorState {
    let q = truth.pose.rot * est.g_hat.rot.transpose();
    let x = truth.pose.trans - q.rotate(&est.g_hat.trans);
    let qt = q.transpose();
    let y = qt.rotate(&x) + p_bar - qt.rotate(p_bar);
    ErrorState {
        q,
        x,
        y,
        phi: est.phi,
        principal_angle: principal_angle(&q),
    }
}

/// `k_p⟨I − Q, K⟩`.
pub fn potential_rotational_error_form(q: &Rotation, k: &Mat3, k_p: f64) -> f64 {
    k_p * (Mat3::identity() - q.matrix()).dot(k)
}

/// Lyapunov bookkeeping at step i+1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyDiagnostics {
    pub u_rot: f64,
    pub u_trans: f64,
    pub t_kin: f64,
    pub v_total: f64,
    /// `Vᵢ₊₁ − Vᵢ`.
    pub delta_v_direct: f64,
    /// `−(l/2)|φᵢ₊₁ + φᵢ|²`.
    pub delta_v_closed: f64,
}

fn lyapunov_value(err: &ErrorState, k: &Mat3, gains: &EstimatorGains) -> (f64, f64, f64) {
    (
        potential_rotational_error_form(&err.q, k, gains.k_p),
        gains.kappa * err.y.norm_squared(),
        kinetic_energy_l(&err.phi, gains.m_gain),
    )
}

pub fn energy_at(err: &ErrorState, k: &Mat3, gains: &EstimatorGains) -> EnergyDiagnostics {
    let (u_rot, u_trans, t_kin) = lyapunov_value(err, k, gains);
    EnergyDiagnostics {
        u_rot,
        u_trans,
        t_kin,
        v_total: u_rot + u_trans + t_kin,
        delta_v_direct: 0.0,
        delta_v_closed: 0.0,
    }
}

pub fn lyapunov_diagnostics(
    err_i: &ErrorState,
    err_ip1: &ErrorState,
    k: &Mat3,
    gains: &EstimatorGains,
) -> EnergyDiagnostics {
    let before = energy_at(err_i, k, gains);
    let after = energy_at(err_ip1, k, gains);
    let sum = err_ip1.phi + err_i.phi;
    EnergyDiagnostics {
        delta_v_direct: after.v_total - before.v_total,
        delta_v_closed: -0.5 * gains.l_gain * sum.norm_squared(),
        ..after
    }
}

/// One step of the error kinematics with the first-order exponential:
///
/// ```text
/// Qᵢ₊₁ = Qᵢ R̂ᵢ exp((h/2)(ωᵢ₊₁ + ωᵢ)^×) R̂ᵢᵀ
/// xᵢ₊₁ = xᵢ − (h/2) Qᵢ (R̂ᵢ(ωᵢ₊₁ + ωᵢ))^× b̂ᵢ + (h/2) Rᵢ₊₁ (vᵢ + vᵢ₊₁)
/// ```
#[allow(clippy::too_many_arguments)]
pub fn error_kinematics_step(
    q_i: &Rotation,
    x_i: &Vec3,
    r_hat_i: &Rotation,
    b_hat_i: &Vec3,
    r_ip1: &Rotation,
    omega_err_sum: &Vec3,
    v_err_sum: &Vec3,
    h: f64,
) -> (Rotation, Vec3) {
    let q_next = ((q_i * r_hat_i) * exp_so3(&(omega_err_sum * (0.5 * h)))) * r_hat_i.transpose();
    let spin = hat(&r_hat_i.rotate(omega_err_sum));
    let x_next = x_i - q_i.matrix() * spin * b_hat_i * (0.5 * h) + r_ip1.rotate(v_err_sum) * (0.5 * h);
    (q_next, x_next)
}

/// Relative eigenvalue gap of `K` below which the Wahba potential is treated
/// as degenerate (non-Morse).
pub const K_DEGENERACY_TOL: f64 = 1e-6;

/// Returns `Some(eigenvalues)` when `K` has a (numerically) repeated eigenvalue.
pub fn k_degeneracy(k: &Mat3) -> Option<[f64; 3]> {
    let e = k.symmetric_eigenvalues();
    let mut ev = [e[0], e[1], e[2]];
    ev.sort_by(|a, b| a.total_cmp(b));
    let scale = ev[2].abs().max(f64::MIN_POSITIVE);
    let repeated = (ev[1] - ev[0]) / scale < K_DEGENERACY_TOL || (ev[2] - ev[1]) / scale < K_DEGENERACY_TOL;
    repeated.then_some(ev)
}
