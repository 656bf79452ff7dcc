//! Ground-truth rigid-body simulation.
//!
//! Velocities follow the 6DOF Euler/Newton equations in the body frame and are
//! advanced with classical RK4. Poses are propagated with the same two-point
//! exponential rule the filter uses internally ([`step_pose`]), so truth and
//! estimate share one discrete kinematic model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liegroup::{exp_so3, GeneralizedVelocity, Mat3, Pose, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("mass must be positive and finite, got {0}")]
    InvalidMass(f64),
    #[error("inertia must be symmetric positive definite: {0}")]
    InvalidInertia(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("tabulated wrench needs at least one sample with strictly increasing times")]
    InvalidTable,
}

/// Mass and inertia of the simulated vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    mass: f64,
    inertia: Mat3,
    inertia_inv: Mat3,
}

impl BodyParams {
    pub fn new(mass: f64, inertia: Mat3) -> Result<Self, DynamicsError> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(DynamicsError::InvalidMass(mass));
        }
        if inertia.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::InvalidInertia("non-finite entry".into()));
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return Err(DynamicsError::InvalidInertia("not symmetric".into()));
        }
        let eig = inertia.symmetric_eigenvalues();
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(DynamicsError::InvalidInertia(format!(
                "eigenvalues {:?} not all positive",
                eig.as_slice()
            )));
        }
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| DynamicsError::InvalidInertia("singular".into()))?;
        Ok(BodyParams {
            mass,
            inertia,
            inertia_inv,
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Mat3 {
        &self.inertia
    }
}

/// One axis of a sinusoidal force: `a_cos·cos(ω t) + a_sin·sin(ω t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub cos_amp: f64,
    pub sin_amp: f64,
    pub freq: f64,
}

impl Harmonic {
    fn eval(&self, t: f64) -> f64 {
        let wt = self.freq * t;
        let mut f = 0.0;
        if self.cos_amp != 0.0 {
            f += self.cos_amp * wt.cos();
        }
        if self.sin_amp != 0.0 {
            f += self.sin_amp * wt.sin();
        }
        f
    }
}

/// A sample of a tabulated wrench.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenchSample {
    pub t: f64,
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

/// Body-frame external force and torque as a function of time only.
#[derive(Debug, Clone, PartialEq)]
pub enum WrenchProfile {
    Zero,
    /// Per-axis harmonic force; torque is `torque_scale` times the force.
    Sinusoid {
        force: [Harmonic; 3],
        torque_scale: f64,
    },
    /// Piecewise-linear interpolation, held constant outside the table.
    Tabulated(Vec<WrenchSample>),
}

impl WrenchProfile {
    /// φ_v(t) = 1e−3·[10 cos 0.1t, 2 sin 0.2t, −2 sin 0.5t] N and τ_v = 1e−6·φ_v.
    pub fn paper_sinusoid() -> Self {
        WrenchProfile::Sinusoid {
            force: [
                Harmonic {
                    cos_amp: 10e-3,
                    sin_amp: 0.0,
                    freq: 0.1,
                },
                Harmonic {
                    cos_amp: 0.0,
                    sin_amp: 2e-3,
                    freq: 0.2,
                },
                Harmonic {
                    cos_amp: 0.0,
                    sin_amp: -2e-3,
                    freq: 0.5,
                },
            ],
            torque_scale: 1e-6,
        }
    }

    pub fn tabulated(samples: Vec<WrenchSample>) -> Result<Self, DynamicsError> {
        if samples.is_empty() || samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(DynamicsError::InvalidTable);
        }
        Ok(WrenchProfile::Tabulated(samples))
    }

    /// Returns `(force, torque)` at time `t`.
    pub fn eval(&self, t: f64) -> (Vec3, Vec3) {
        match self {
            WrenchProfile::Zero => (Vec3::zeros(), Vec3::zeros()),
            WrenchProfile::Sinusoid {
                force,
                torque_scale,
            } => {
                let f = Vec3::new(force[0].eval(t), force[1].eval(t), force[2].eval(t));
                (f, f * *torque_scale)
            }
            WrenchProfile::Tabulated(samples) => {
                let first = &samples[0];
                let last = &samples[samples.len() - 1];
                if t <= first.t {
                    return (Vec3::from(first.force), Vec3::from(first.torque));
                }
                if t >= last.t {
                    return (Vec3::from(last.force), Vec3::from(last.torque));
                }
                let k = samples.partition_point(|s| s.t <= t);
                let (a, b) = (&samples[k - 1], &samples[k]);
                let s = (t - a.t) / (b.t - a.t);
                let lerp = |x: [f64; 3], y: [f64; 3]| Vec3::from(x) * (1.0 - s) + Vec3::from(y) * s;
                (lerp(a.force, b.force), lerp(a.torque, b.torque))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueState {
    pub pose: Pose,
    pub xi: GeneralizedVelocity,
    pub t: f64,
}

/// Uniformly sampled truth, `states.len() == n_steps() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<TrueState>,
    pub h: f64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Two-point exponential pose update:
/// `R⁺ = R exp((h/2)(Ω + Ω⁺)^×)`, `b⁺ = b + (h/2) R⁺ (v + v⁺)`.
///
/// Equivalent to right-multiplying `g` by the homogeneous increment
/// `[E, E (h/2)(v + v⁺); 0 1]`.
pub fn step_pose(
    g: &Pose,
    xi: &GeneralizedVelocity,
    xi_next: &GeneralizedVelocity,
    h: f64,
) -> Pose {
    let half = 0.5 * h;
    let rot = g.rot * exp_so3(&((xi.omega + xi_next.omega) * half));
    let trans = g.trans + rot.rotate(&((xi.vel + xi_next.vel) * half));
    Pose { rot, trans }
}

/// Exact inverse of [`step_pose`]: recovers `g` from `step_pose(g, xi, xi_next, h)`.
pub fn unstep_pose(
    g_next: &Pose,
    xi: &GeneralizedVelocity,
    xi_next: &GeneralizedVelocity,
    h: f64,
) -> Pose {
    let half = 0.5 * h;
    let trans = g_next.trans - g_next.rot.rotate(&((xi.vel + xi_next.vel) * half));
    let rot = g_next.rot * exp_so3(&(-(xi.omega + xi_next.omega) * half));
    Pose { rot, trans }
}

/// Body-frame accelerations `(Ω̇, v̇)`.
pub fn dynamics_rhs(
    xi: &GeneralizedVelocity,
    t: f64,
    wrench: &WrenchProfile,
    body: &BodyParams,
) -> (Vec3, Vec3) {
    let (force, torque) = wrench.eval(t);
    let omega = &xi.omega;
    let omega_dot = body.inertia_inv * (torque - omega.cross(&(body.inertia * omega)));
    let v_dot = force / body.mass - omega.cross(&xi.vel);
    (omega_dot, v_dot)
}

/// One classical RK4 step on `(Ω, v)` starting from `state`.
pub fn integrate_velocities_rk4(
    state: &TrueState,
    wrench: &WrenchProfile,
    body: &BodyParams,
    h: f64,
) -> GeneralizedVelocity {
    let t = state.t;
    let x0 = state.xi;
    let f = |xi: &GeneralizedVelocity, t: f64| {
        let (wd, vd) = dynamics_rhs(xi, t, wrench, body);
        GeneralizedVelocity::new(wd, vd)
    };
    let k1 = f(&x0, t);
    let k2 = f(&(x0 + k1 * (0.5 * h)), t + 0.5 * h);
    let k3 = f(&(x0 + k2 * (0.5 * h)), t + 0.5 * h);
    let k4 = f(&(x0 + k3 * h), t + h);
    x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Simulates `n` steps of size `h` from `init`.
pub fn simulate_truth(
    init: &TrueState,
    wrench: &WrenchProfile,
    body: &BodyParams,
    h: f64,
    n: usize,
) -> Result<Trajectory, DynamicsError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(DynamicsError::InvalidStep(h));
    }
    let mut states = Vec::with_capacity(n + 1);
    states.push(*init);
    let t0 = init.t;
    for i in 0..n {
        let cur = &states[i];
        let xi_next = integrate_velocities_rk4(cur, wrench, body, h);
        let pose = step_pose(&cur.pose, &cur.xi, &xi_next, h);
        states.push(TrueState {
            pose,
            xi: xi_next,
            // multiply rather than accumulate so timestamps stay uniform
            t: t0 + (i + 1) as f64 * h,
        });
    }
    Ok(Trajectory { states, h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::Rotation;
    use nalgebra::Matrix4;
    use std::f64::consts::PI;

    fn paper_body() -> BodyParams {
        BodyParams::new(
            0.42,
            Mat3::from_diagonal(&Vec3::new(51.2e-3, 60.2e-3, 59.6e-3)),
        )
        .unwrap()
    }

    fn paper_init() -> TrueState {
        TrueState {
            pose: Pose::new(
                exp_so3(&(Vec3::new(3.0, -6.0, 2.0) * (PI / 4.0 / 7.0))),
                Vec3::new(2.5, 0.5, -3.0),
            ),
            xi: GeneralizedVelocity::new(Vec3::new(0.2, -0.05, 0.1), Vec3::new(-0.05, 0.15, 0.03)),
            t: 0.0,
        }
    }

    #[test]
    fn body_params_validation() {
        assert!(BodyParams::new(0.0, Mat3::identity()).is_err());
        assert!(BodyParams::new(1.0, Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0))).is_err());
        let mut asym = Mat3::identity();
        asym[(0, 1)] = 0.1;
        assert!(BodyParams::new(1.0, asym).is_err());
    }

    #[test]
    fn step_pose_rest_and_pure_translation() {
        let g = Pose::new(exp_so3(&Vec3::new(0.3, -0.2, 0.9)), Vec3::new(1.0, 2.0, 3.0));
        let zero = GeneralizedVelocity::zero();
        assert_eq!(step_pose(&g, &zero, &zero, 0.01), g);

        let v = GeneralizedVelocity::new(Vec3::zeros(), Vec3::new(0.5, -1.0, 2.0));
        let next = step_pose(&g, &v, &v, 0.01);
        assert_eq!(next.rot, g.rot);
        assert!((next.trans - (g.trans + g.rot.rotate(&v.vel) * 0.01)).norm() < 1e-15);
    }

    #[test]
    fn step_pose_matches_homogeneous_product() {
        let g = Pose::new(exp_so3(&Vec3::new(-1.1, 0.4, 0.6)), Vec3::new(-3.0, 0.2, 7.0));
        let a = GeneralizedVelocity::new(Vec3::new(0.5, -1.5, 2.0), Vec3::new(1.0, 3.0, -0.5));
        let b = GeneralizedVelocity::new(Vec3::new(-0.2, 0.7, 1.1), Vec3::new(-2.0, 0.4, 0.9));
        let h = 0.05;
        let e = exp_so3(&((a.omega + b.omega) * (h / 2.0)));
        let mut inc = Matrix4::identity();
        inc.fixed_view_mut::<3, 3>(0, 0).copy_from(e.matrix());
        inc.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(e.matrix() * (a.vel + b.vel) * (h / 2.0)));
        let oracle = g.to_homogeneous() * inc;
        let got = step_pose(&g, &a, &b, h).to_homogeneous();
        assert!((got - oracle).abs().max() < 1e-13);
    }

    #[test]
    fn unstep_inverts_step() {
        let g = paper_init().pose;
        let a = GeneralizedVelocity::new(Vec3::new(0.5, -1.5, 2.0), Vec3::new(1.0, 3.0, -0.5));
        let b = GeneralizedVelocity::new(Vec3::new(-0.2, 0.7, 1.1), Vec3::new(-2.0, 0.4, 0.9));
        let back = unstep_pose(&step_pose(&g, &a, &b, 0.01), &a, &b, 0.01);
        assert!((back.to_homogeneous() - g.to_homogeneous()).abs().max() < 1e-14);
    }

    #[test]
    fn negated_step_reverses_rotation_exactly_and_position_to_second_order() {
        let traj = simulate_truth(&paper_init(), &WrenchProfile::paper_sinusoid(), &paper_body(), 0.01, 6000)
            .unwrap();
        let h = traj.h;
        let mut g = traj.states.last().unwrap().pose;
        let mut analytic_residual = Vec3::zeros();
        for w in traj.states.windows(2).rev() {
            let (prev, next) = (&w[0], &w[1]);
            g = step_pose(&g, &next.xi, &prev.xi, -h);
            // forward and negated steps disagree by (h/2)(R_{i+1} - R_i)(v_i + v_{i+1})
            analytic_residual +=
                (next.pose.rot.matrix() - prev.pose.rot.matrix()) * (prev.xi.vel + next.xi.vel) * (h / 2.0);
        }
        let start = &traj.states[0].pose;
        assert!((g.rot.matrix() - start.rot.matrix()).abs().max() < 1e-10);
        let pos_err = g.trans - start.trans;
        assert!((pos_err - analytic_residual).norm() < 1e-10);

        let mut g = traj.states.last().unwrap().pose;
        for w in traj.states.windows(2).rev() {
            g = unstep_pose(&g, &w[0].xi, &w[1].xi, h);
        }
        assert!((g.to_homogeneous() - start.to_homogeneous()).abs().max() < 1e-10);
    }

    #[test]
    fn rhs_examples() {
        let body = paper_body();
        let (wd, vd) = dynamics_rhs(&GeneralizedVelocity::zero(), 0.0, &WrenchProfile::Zero, &body);
        assert_eq!((wd, vd), (Vec3::zeros(), Vec3::zeros()));

        let unit = BodyParams::new(1.0, Mat3::identity()).unwrap();
        let xi = GeneralizedVelocity::new(Vec3::new(0.3, -2.0, 1.0), Vec3::zeros());
        let (wd, _) = dynamics_rhs(&xi, 0.0, &WrenchProfile::Zero, &unit);
        assert_eq!(wd, Vec3::zeros());
    }

    #[test]
    fn rhs_paper_values_by_hand() {
        let body = paper_body();
        let s = paper_init();
        let (wd, vd) = dynamics_rhs(&s.xi, 0.0, &WrenchProfile::paper_sinusoid(), &body);
        let (w1, w2, w3) = (0.2, -0.05, 0.1);
        let (v1, v2, v3) = (-0.05, 0.15, 0.03);
        // φ_v(0) = [10e-3, 0, 0], τ_v(0) = [10e-9, 0, 0]
        let (f1, f2, f3) = (10e-3, 0.0, 0.0);
        let vd_hand = Vec3::new(
            -(w2 * v3 - w3 * v2) + f1 / 0.42,
            -(w3 * v1 - w1 * v3) + f2 / 0.42,
            -(w1 * v2 - w2 * v1) + f3 / 0.42,
        );
        assert!((vd - vd_hand).norm() < 1e-15);
        let (j1, j2, j3) = (51.2e-3, 60.2e-3, 59.6e-3);
        let wd_hand = Vec3::new(
            (-(w2 * j3 * w3 - w3 * j2 * w2) + 10e-9) / j1,
            -(w3 * j1 * w1 - w1 * j3 * w3) / j2,
            -(w1 * j2 * w2 - w2 * j1 * w1) / j3,
        );
        assert!((wd - wd_hand).norm() < 1e-14);
    }

    #[test]
    fn rk4_zero_wrench_at_rest() {
        let s = TrueState {
            pose: Pose::identity(),
            xi: GeneralizedVelocity::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)),
            t: 0.0,
        };
        let next = integrate_velocities_rk4(&s, &WrenchProfile::Zero, &paper_body(), 0.01);
        assert_eq!(next, s.xi);
    }

    #[test]
    fn rk4_linear_force_matches_quadrature() {
        // f(t) = f0 + f1 t with Ω ≡ 0: v(t) = v0 + (f0 t + f1 t²/2)/m exactly.
        let f0 = [0.3, -0.1, 0.2];
        let f1 = [0.05, 0.02, -0.04];
        let samples = (0..=10)
            .map(|k| {
                let t = k as f64;
                WrenchSample {
                    t,
                    force: [f0[0] + f1[0] * t, f0[1] + f1[1] * t, f0[2] + f1[2] * t],
                    torque: [0.0; 3],
                }
            })
            .collect();
        let wrench = WrenchProfile::tabulated(samples).unwrap();
        let body = BodyParams::new(2.0, Mat3::identity()).unwrap();
        let v0 = Vec3::new(0.1, 0.2, -0.3);
        let h = 0.1;
        let traj = simulate_truth(
            &TrueState {
                pose: Pose::identity(),
                xi: GeneralizedVelocity::new(Vec3::zeros(), v0),
                t: 0.0,
            },
            &wrench,
            &body,
            h,
            50,
        )
        .unwrap();
        for s in &traj.states {
            let t = s.t;
            let exact = v0 + (Vec3::from(f0) * t + Vec3::from(f1) * (t * t / 2.0)) / 2.0;
            assert!((s.xi.vel - exact).norm() < 1e-14, "t={t}");
            assert_eq!(s.xi.omega, Vec3::zeros());
        }
    }

    #[test]
    fn rk4_fourth_order_self_convergence() {
        let body = paper_body();
        let wrench = WrenchProfile::paper_sinusoid();
        let init = TrueState {
            xi: GeneralizedVelocity::new(Vec3::new(2.0, -1.0, 1.5), Vec3::new(0.5, -0.3, 0.2)),
            ..paper_init()
        };
        let horizon = 10.0;
        let run = |h: f64| {
            let n = (horizon / h).round() as usize;
            simulate_truth(&init, &wrench, &body, h, n).unwrap().states[n].xi
        };
        let reference = run(1e-3);
        let e1 = (run(0.1) - reference).norm();
        let e2 = (run(0.05) - reference).norm();
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}, errors {e1:e} {e2:e}");
    }

    #[test]
    fn simulate_rest_is_constant() {
        let s = TrueState {
            pose: paper_init().pose,
            xi: GeneralizedVelocity::zero(),
            t: 0.0,
        };
        let traj = simulate_truth(&s, &WrenchProfile::Zero, &paper_body(), 0.01, 200).unwrap();
        assert_eq!(traj.states.len(), 201);
        assert!(traj.states.iter().all(|x| x.pose == s.pose && x.xi == s.xi));
    }

    #[test]
    fn simulate_paper_trajectory_integrity() {
        let traj =
            simulate_truth(&paper_init(), &WrenchProfile::paper_sinusoid(), &paper_body(), 0.01, 6000).unwrap();
        assert_eq!(traj.n_steps(), 6000);
        for (i, s) in traj.states.iter().enumerate() {
            assert!((s.t - i as f64 * 0.01).abs() < 1e-12);
            assert!(Rotation::from_matrix(*s.pose.rot.matrix()).is_ok());
        }
        assert!(traj.states[6000].pose.rot.orthogonality_error() < 1e-9);
    }

    #[test]
    fn free_body_conserves_energy_and_momentum() {
        let body = paper_body();
        let init = TrueState {
            t: 0.0,
            ..paper_init()
        };
        let traj = simulate_truth(&init, &WrenchProfile::Zero, &body, 0.01, 6000).unwrap();
        let energy = |s: &TrueState| 0.5 * s.xi.omega.dot(&(body.inertia() * s.xi.omega));
        let momentum = |s: &TrueState| s.pose.rot.rotate(&(body.inertia() * s.xi.omega)).norm();
        let (e0, p0) = (energy(&traj.states[0]), momentum(&traj.states[0]));
        for s in &traj.states {
            assert!(((energy(s) - e0) / e0).abs() < 1e-8);
            assert!(((momentum(s) - p0) / p0).abs() < 1e-7);
        }
    }

    #[test]
    fn tabulated_profile_interpolates_and_clamps() {
        let w = WrenchProfile::tabulated(vec![
            WrenchSample {
                t: 0.0,
                force: [0.0, 0.0, 0.0],
                torque: [1.0, 0.0, 0.0],
            },
            WrenchSample {
                t: 2.0,
                force: [2.0, -4.0, 0.0],
                torque: [3.0, 0.0, 0.0],
            },
        ])
        .unwrap();
        assert_eq!(w.eval(1.0).0, Vec3::new(1.0, -2.0, 0.0));
        assert_eq!(w.eval(-1.0).1, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(w.eval(5.0).1, Vec3::new(3.0, 0.0, 0.0));
        assert!(WrenchProfile::tabulated(vec![]).is_err());
    }
}
