//! Synthetic optical/inertial measurements.
//!
//! A [`MeasurementFrame`] holds one instant's sensor snapshot: inertial
//! reference directions `D`, their measured body-frame counterparts `Lᵐ`,
//! beacon means `p̄`/`āᵐ`, the measured velocity `ξᵐ` and per-column weights.
//! Column order is deterministic: every beacon pair `(λ, l)` with `λ < l` in
//! lexicographic order, followed by the inertial directions.

use nalgebra::{DVector, Matrix3xX};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::TrueState;
use crate::liegroup::{exp_so3, GeneralizedVelocity, Mat3, Pose, Rotation, Vec3};

pub type DirMatrix = Matrix3xX<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error(
        "attitude/position unobservable: {beacons} visible beacons and {inertial} inertial \
         directions (need C(beacons,2) + inertial >= 2 and beacons >= 1)"
    )]
    Unobservable { beacons: usize, inertial: usize },
    #[error("beacon index {index} out of range ({count} beacons)")]
    BadBeaconIndex { index: usize, count: usize },
    #[error("empty beacon set")]
    EmptyBeaconSet,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid noise bound {name} = {value}")]
    InvalidNoise { name: &'static str, value: f64 },
}

/// `C(n_beacons, 2) + n_inertial >= 2` and at least one beacon.
pub fn observability_check(n_beacons_visible: usize, n_inertial: usize) -> bool {
    let pairs = n_beacons_visible * n_beacons_visible.saturating_sub(1) / 2;
    n_beacons_visible >= 1 && pairs + n_inertial >= 2
}

/// Beacon layout and inertial reference directions, all in the inertial frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    beacons: Vec<Vec3>,
    inertial_dirs: Vec<Vec3>,
    sensor_offsets: Vec<Vec3>,
}

impl Scene {
    /// Inertial directions are normalized on construction.
    pub fn new(
        beacons: Vec<Vec3>,
        inertial_dirs: Vec<Vec3>,
        sensor_offsets: Vec<Vec3>,
    ) -> Result<Self, MeasurementError> {
        if beacons.is_empty() {
            return Err(MeasurementError::InvalidScene("at least one beacon required".into()));
        }
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !beacons.iter().chain(&inertial_dirs).chain(&sensor_offsets).all(finite) {
            return Err(MeasurementError::InvalidScene("non-finite coordinate".into()));
        }
        let mut dirs = Vec::with_capacity(inertial_dirs.len());
        for d in inertial_dirs {
            let n = d.norm();
            if n < 1e-9 {
                return Err(MeasurementError::InvalidScene("zero inertial direction".into()));
            }
            dirs.push(d / n);
        }
        Ok(Scene {
            beacons,
            inertial_dirs: dirs,
            sensor_offsets,
        })
    }

    /// Eight beacons on the corners of a cube of side `side` centred at the
    /// origin, plus the nadir and magnetic-field directions.
    pub fn cube_corners(side: f64, inertial_dirs: Vec<Vec3>) -> Result<Self, MeasurementError> {
        let s = side / 2.0;
        let mut beacons = Vec::with_capacity(8);
        for x in [-s, s] {
            for y in [-s, s] {
                for z in [-s, s] {
                    beacons.push(Vec3::new(x, y, z));
                }
            }
        }
        Scene::new(beacons, inertial_dirs, Vec::new())
    }

    pub fn beacons(&self) -> &[Vec3] {
        &self.beacons
    }

    pub fn inertial_dirs(&self) -> &[Vec3] {
        &self.inertial_dirs
    }

    pub fn sensor_offsets(&self) -> &[Vec3] {
        &self.sensor_offsets
    }

    fn check_visible(&self, visible: &[usize]) -> Result<(), MeasurementError> {
        for &index in visible {
            if index >= self.beacons.len() {
                return Err(MeasurementError::BadBeaconIndex {
                    index,
                    count: self.beacons.len(),
                });
            }
        }
        Ok(())
    }
}

/// Which beacons are visible at a given step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Visibility {
    #[default]
    All,
    Fixed { beacons: Vec<usize> },
    /// Cycles through `sets`, switching every `period_steps` steps.
    Cycle {
        sets: Vec<Vec<usize>>,
        period_steps: usize,
    },
}

impl Visibility {
    pub fn visible_at(&self, step: usize, n_beacons: usize) -> Vec<usize> {
        match self {
            Visibility::All => (0..n_beacons).collect(),
            Visibility::Fixed { beacons } => beacons.clone(),
            Visibility::Cycle { sets, period_steps } => {
                let k = (step / (*period_steps).max(1)) % sets.len().max(1);
                sets.get(k).cloned().unwrap_or_default()
            }
        }
    }

    /// True when the observed set never changes (K and p̄ constant).
    pub fn is_fixed(&self) -> bool {
        match self {
            Visibility::All | Visibility::Fixed { .. } => true,
            Visibility::Cycle { sets, .. } => sets.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

/// How the per-column Wahba weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `w_j = 1/n`.
    Uniform,
    /// `w_j = 1/(n‖d_j‖²)`, so every column contributes as a unit direction.
    #[default]
    Normalized,
}

impl WeightRule {
    pub fn weights(&self, d: &DirMatrix) -> DVector<f64> {
        let n = d.ncols() as f64;
        match self {
            WeightRule::Uniform => DVector::from_element(d.ncols(), 1.0 / n),
            WeightRule::Normalized => {
                DVector::from_iterator(d.ncols(), d.column_iter().map(|c| 1.0 / (n * c.norm_squared())))
            }
        }
    }
}

/// Bounded noise magnitudes (radians, rad/s, m/s) and the base seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub dir_bound: f64,
    pub gyro_bound: f64,
    pub vel_bound: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            dir_bound: 0.0,
            gyro_bound: 0.0,
            vel_bound: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        for (name, value) in [
            ("dir_bound", self.dir_bound),
            ("gyro_bound", self.gyro_bound),
            ("vel_bound", self.vel_bound),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(MeasurementError::InvalidNoise { name, value });
            }
        }
        Ok(())
    }
}

/// One independent ChaCha stream per noise channel, so turning a channel
/// off never shifts the draws of another.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    pub directions: ChaCha8Rng,
    pub beacons: ChaCha8Rng,
    pub gyro: ChaCha8Rng,
    pub velocity: ChaCha8Rng,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        NoiseStreams {
            directions: stream(0),
            beacons: stream(1),
            gyro: stream(2),
            velocity: stream(3),
        }
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let u: [f64; 3] = UnitSphere.sample(rng);
    Vec3::from(u)
}

/// Rotates `v` by a random angle in `[0, bound]` about a uniform random axis.
pub fn perturb_vector_angle<R: Rng + ?Sized>(v: &Vec3, bound: f64, rng: &mut R) -> Vec3 {
    if bound == 0.0 {
        return *v;
    }
    let theta = rng.random_range(0.0..=bound);
    let axis = unit_vector(rng);
    exp_so3(&(axis * theta)).rotate(v)
}

/// Adds a vector with uniform direction and magnitude uniform in `[0, bound]`.
pub fn perturb_vector_additive<R: Rng + ?Sized>(v: &Vec3, bound: f64, rng: &mut R) -> Vec3 {
    if bound == 0.0 {
        return *v;
    }
    let mag = rng.random_range(0.0..=bound);
    v + unit_vector(rng) * mag
}

/// Rotates every column of `l` independently by at most `spec.dir_bound`.
pub fn perturb_directions<R: Rng + ?Sized>(l: &DirMatrix, spec: &NoiseSpec, rng: &mut R) -> DirMatrix {
    let mut out = l.clone();
    for mut col in out.column_iter_mut() {
        let v = Vec3::new(col[0], col[1], col[2]);
        col.copy_from(&perturb_vector_angle(&v, spec.dir_bound, rng));
    }
    out
}

pub fn perturb_velocity(
    xi: &GeneralizedVelocity,
    spec: &NoiseSpec,
    streams: &mut NoiseStreams,
) -> GeneralizedVelocity {
    GeneralizedVelocity::new(
        perturb_vector_additive(&xi.omega, spec.gyro_bound, &mut streams.gyro),
        perturb_vector_additive(&xi.vel, spec.vel_bound, &mut streams.velocity),
    )
}

/// Noise-free body-frame beacon positions `a_j = Rᵀ(p_j − b)`.
pub fn body_frame_beacons(
    g: &Pose,
    scene: &Scene,
    visible: &[usize],
) -> Result<Vec<Vec3>, MeasurementError> {
    scene.check_visible(visible)?;
    let rt = g.rot.transpose();
    Ok(visible
        .iter()
        .map(|&j| rt.rotate(&(scene.beacons[j] - g.trans)))
        .collect())
}

/// Builds `(D, L)` with `D = R L` (noise-free).
pub fn assemble_directions(
    g: &Pose,
    scene: &Scene,
    visible: &[usize],
) -> Result<(DirMatrix, DirMatrix), MeasurementError> {
    let n_inertial = scene.inertial_dirs.len();
    if !observability_check(visible.len(), n_inertial) {
        return Err(MeasurementError::Unobservable {
            beacons: visible.len(),
            inertial: n_inertial,
        });
    }
    let a = body_frame_beacons(g, scene, visible)?;
    let rt = g.rot.transpose();
    let n_pairs = visible.len() * (visible.len() - 1) / 2;
    let n = n_pairs + n_inertial;
    let mut d = DirMatrix::zeros(n);
    let mut l = DirMatrix::zeros(n);
    let mut col = 0;
    for i in 0..visible.len() {
        for k in (i + 1)..visible.len() {
            d.set_column(col, &(scene.beacons[visible[i]] - scene.beacons[visible[k]]));
            l.set_column(col, &(a[i] - a[k]));
            col += 1;
        }
    }
    for e in &scene.inertial_dirs {
        d.set_column(col, e);
        l.set_column(col, &rt.rotate(e));
        col += 1;
    }
    Ok((d, l))
}

/// Means of the visible inertial beacon positions and of `a_list`.
pub fn mean_vectors(
    scene: &Scene,
    visible: &[usize],
    a_list: &[Vec3],
) -> Result<(Vec3, Vec3), MeasurementError> {
    if visible.is_empty() || a_list.is_empty() {
        return Err(MeasurementError::EmptyBeaconSet);
    }
    if visible.len() != a_list.len() {
        return Err(MeasurementError::Dimension(format!(
            "{} visible beacons but {} body-frame vectors",
            visible.len(),
            a_list.len()
        )));
    }
    scene.check_visible(visible)?;
    let inv = 1.0 / visible.len() as f64;
    let p_bar = visible.iter().map(|&j| scene.beacons[j]).sum::<Vec3>() * inv;
    let a_bar = a_list.iter().sum::<Vec3>() * inv;
    Ok((p_bar, a_bar))
}

/// One time instant's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    d: DirMatrix,
    l_m: DirMatrix,
    p_bar: Vec3,
    a_bar_m: Vec3,
    xi_m: GeneralizedVelocity,
    weights: DVector<f64>,
    t: f64,
}

impl MeasurementFrame {
    pub fn new(
        d: DirMatrix,
        l_m: DirMatrix,
        p_bar: Vec3,
        a_bar_m: Vec3,
        xi_m: GeneralizedVelocity,
        weights: DVector<f64>,
        t: f64,
    ) -> Result<Self, MeasurementError> {
        if d.ncols() != l_m.ncols() || d.ncols() != weights.len() {
            return Err(MeasurementError::Dimension(format!(
                "D has {} columns, Lᵐ {}, W {}",
                d.ncols(),
                l_m.ncols(),
                weights.len()
            )));
        }
        if d.ncols() < 2 {
            return Err(MeasurementError::Dimension(format!(
                "need at least 2 direction columns, got {}",
                d.ncols()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(MeasurementError::Dimension("weights must be positive".into()));
        }
        Ok(MeasurementFrame {
            d,
            l_m,
            p_bar,
            a_bar_m,
            xi_m,
            weights,
            t,
        })
    }

    pub fn d(&self) -> &DirMatrix {
        &self.d
    }
    pub fn l_m(&self) -> &DirMatrix {
        &self.l_m
    }
    pub fn p_bar(&self) -> &Vec3 {
        &self.p_bar
    }
    pub fn a_bar_m(&self) -> &Vec3 {
        &self.a_bar_m
    }
    pub fn xi_m(&self) -> &GeneralizedVelocity {
        &self.xi_m
    }
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn n_columns(&self) -> usize {
        self.d.ncols()
    }

    /// `Γ = D W Lᵐᵀ`.
    pub fn gamma(&self) -> Mat3 {
        weighted_outer(&self.d, &self.weights, &self.l_m)
    }

    /// `K = D W Dᵀ`.
    pub fn k_matrix(&self) -> Mat3 {
        weighted_outer(&self.d, &self.weights, &self.d)
    }

    /// `S_Γ(R̂) = vex(Γᵀ R̂ − R̂ᵀ Γ)`.
    pub fn s_gamma(&self, r_hat: &Rotation) -> Vec3 {
        s_gamma_from(&self.gamma(), r_hat)
    }
}

pub(crate) fn weighted_outer(a: &DirMatrix, w: &DVector<f64>, b: &DirMatrix) -> Mat3 {
    let mut out = Mat3::zeros();
    for ((ca, cb), wj) in a.column_iter().zip(b.column_iter()).zip(w.iter()) {
        out += ca * cb.transpose() * *wj;
    }
    out
}

pub(crate) fn s_gamma_from(gamma: &Mat3, r_hat: &Rotation) -> Vec3 {
    let r = r_hat.matrix();
    crate::liegroup::vex(&(gamma.transpose() * r - r.transpose() * gamma))
}

/// Synthesizes one frame from the truth state.
///
/// `āᵐ` is the mean of body-frame beacon vectors, each perturbed with the
/// same angular mechanism as the direction columns.
pub fn make_measurement_frame(
    truth: &TrueState,
    scene: &Scene,
    visible: &[usize],
    noise: &NoiseSpec,
    weights: WeightRule,
    streams: &mut NoiseStreams,
) -> Result<MeasurementFrame, MeasurementError> {
    let (d, l) = assemble_directions(&truth.pose, scene, visible)?;
    let l_m = perturb_directions(&l, noise, &mut streams.directions);
    let a: Vec<Vec3> = body_frame_beacons(&truth.pose, scene, visible)?
        .iter()
        .map(|aj| perturb_vector_angle(aj, noise.dir_bound, &mut streams.beacons))
        .collect();
    let (p_bar, a_bar_m) = mean_vectors(scene, visible, &a)?;
    let xi_m = perturb_velocity(&truth.xi, noise, streams);
    let w = weights.weights(&d);
    MeasurementFrame::new(d, l_m, p_bar, a_bar_m, xi_m, w, truth.t)
}
