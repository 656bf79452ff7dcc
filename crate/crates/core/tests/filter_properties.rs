use proptest::prelude::*;

use se3vf::dynamics::{step_pose, TrueState};
use se3vf::filter::{
    error_state, filter_step, lyapunov_diagnostics, EstimatorGains, EstimatorState, SolverConfig,
};
use se3vf::liegroup::{exp_so3, GeneralizedVelocity, Pose, Vec3};
use se3vf::measurement::{make_measurement_frame, NoiseSpec, NoiseStreams, Scene, WeightRule};

fn v3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0..1.0f64).prop_map(Vec3::from)
}

fn scene() -> Scene {
    Scene::cube_corners(20.0, vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.1, 0.975, -0.2)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_keeps_rotation_and_closed_form_is_dissipative(
        rot in v3(), pos in v3(), est_rot in v3(), est_pos in v3(),
        omega in v3(), vel in v3(), phi_w in v3(), phi_v in v3(), seed in 0u64..1000,
    ) {
        let h = 0.01;
        let all: Vec<usize> = (0..8).collect();
        let noise = NoiseSpec { dir_bound: 0.04, gyro_bound: 0.017, vel_bound: 0.025, seed };
        let mut streams = NoiseStreams::new(seed);
        let xi = GeneralizedVelocity::new(omega * 0.5, vel);
        let t0 = TrueState { pose: Pose::new(exp_so3(&(rot * 3.0)), pos * 5.0), xi, t: 0.0 };
        let t1 = TrueState { pose: step_pose(&t0.pose, &xi, &xi, h), xi, t: h };
        let f0 = make_measurement_frame(&t0, &scene(), &all, &noise, WeightRule::Normalized, &mut streams).unwrap();
        let f1 = make_measurement_frame(&t1, &scene(), &all, &noise, WeightRule::Normalized, &mut streams).unwrap();
        let s0 = EstimatorState::from_phi(
            Pose::new(exp_so3(&(est_rot * 3.0)), est_pos * 5.0),
            GeneralizedVelocity::new(phi_w, phi_v),
            &f0,
        );
        let gains = EstimatorGains::paper();
        let (s1, report) = filter_step(&s0, &f0, &f1, &gains, h, &SolverConfig::default()).unwrap();
        prop_assert!(report.iterations <= 50);
        prop_assert!(s1.g_hat.rot.orthogonality_error() < 1e-12);
        prop_assert_eq!(s1.xi_hat, *f1.xi_m() - s1.phi);

        let e0 = error_state(&t0, &s0, f0.p_bar());
        let e1 = error_state(&t1, &s1, f1.p_bar());
        let d = lyapunov_diagnostics(&e0, &e1, &f1.k_matrix(), &gains);
        prop_assert!(d.delta_v_closed <= 0.0);
    }

    #[test]
    fn solved_step_satisfies_the_recursion(
        est_rot in v3(), est_pos in v3(), phi_w in v3(), phi_v in v3(),
    ) {
        let h = 0.01;
        let all: Vec<usize> = (0..8).collect();
        let truth = TrueState { pose: Pose::identity(), xi: GeneralizedVelocity::zero(), t: 0.0 };
        let f = make_measurement_frame(&truth, &scene(), &all, &NoiseSpec::none(), WeightRule::Normalized, &mut NoiseStreams::new(0)).unwrap();
        let s0 = EstimatorState::from_phi(
            Pose::new(exp_so3(&(est_rot * 2.0)), est_pos * 3.0),
            GeneralizedVelocity::new(phi_w, phi_v),
            &f,
        );
        let gains = EstimatorGains::paper();
        let (s1, _) = filter_step(&s0, &f, &f, &gains, h, &SolverConfig::default()).unwrap();
        let z = se3vf::filter::z_vector(&s0, &s1, &f, &f, &gains);
        let expected = se3vf::filter::recursion_step(&s0.phi, &z, &gains, h);
        prop_assert!((expected - s1.phi).norm() < 1e-10);
        let g = step_pose(&s0.g_hat, &s0.xi_hat, &s1.xi_hat, h);
        prop_assert_eq!(g, s1.g_hat);
    }
}
