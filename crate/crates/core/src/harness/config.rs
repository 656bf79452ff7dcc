//! Experiment configuration.
//!
//! The on-disk format is TOML with units in the field names. Angles are in
//! degrees where the field says `_deg`; everything is converted to SI and
//! radians by [`ExperimentConfig::resolve`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{BodyParams, Harmonic, TrueState, WrenchProfile, WrenchSample};
use crate::filter::{EstimatorGains, SolverConfig};
use crate::liegroup::{exp_so3, GeneralizedVelocity, Mat3, Pose, Vec3};
use crate::measurement::{NoiseSpec, Scene, Visibility, WeightRule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown preset `{0}` (available: paper_sec6)")]
    UnknownPreset(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub mass_kg: f64,
    /// Row-major inertia tensor.
    pub inertia_kg_m2: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicConfig {
    #[serde(default)]
    pub cos_amp_n: f64,
    #[serde(default)]
    pub sin_amp_n: f64,
    pub freq_rad_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchSampleConfig {
    pub t_s: f64,
    pub force_n: [f64; 3],
    pub torque_n_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WrenchConfig {
    Zero,
    /// Per-axis harmonic force; the torque is `torque_scale_m` times the force.
    Sinusoid {
        force_n: [HarmonicConfig; 3],
        torque_scale_m: f64,
    },
    Tabulated { samples: Vec<WrenchSampleConfig> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub beacons_m: Vec<[f64; 3]>,
    /// Normalized on load.
    pub inertial_dirs: Vec<[f64; 3]>,
    #[serde(default)]
    pub visibility: Visibility,
    #[serde(default)]
    pub weights: WeightRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub dir_bound_deg: f64,
    pub gyro_bound_deg_s: f64,
    pub vel_bound_m_s: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            enabled: false,
            dir_bound_deg: 0.0,
            gyro_bound_deg_s: 0.0,
            vel_bound_m_s: 0.0,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub m: f64,
    pub l: f64,
    pub k_p: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthInitConfig {
    pub attitude_rotvec_rad: [f64; 3],
    pub position_m: [f64; 3],
    pub omega_rad_s: [f64; 3],
    pub velocity_m_s: [f64; 3],
}

/// The initial estimate, either absolute or as an error relative to the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimateInitConfig {
    Absolute {
        attitude_rotvec_rad: [f64; 3],
        position_m: [f64; 3],
        omega_rad_s: [f64; 3],
        velocity_m_s: [f64; 3],
    },
    /// `Q₀ = exp(attitude_error)`, `x₀ = position_error`, `φ₀ = (omega_error, velocity_error)`.
    Relative {
        attitude_error_rotvec_rad: [f64; 3],
        position_error_m: [f64; 3],
        omega_error_rad_s: [f64; 3],
        velocity_error_m_s: [f64; 3],
    },
}

impl EstimateInitConfig {
    /// Zero error in every channel.
    pub fn exact() -> Self {
        EstimateInitConfig::Relative {
            attitude_error_rotvec_rad: [0.0; 3],
            position_error_m: [0.0; 3],
            omega_error_rad_s: [0.0; 3],
            velocity_error_m_s: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub spectral_relaxation: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let s = SolverConfig::default();
        SolverSettings {
            tol: s.tol,
            max_iter: s.max_iter,
            damping: s.damping,
            spectral_relaxation: s.spectral_relaxation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub truth_csv: bool,
    pub estimate_csv: bool,
    pub diagnostics_csv: bool,
    pub measurements_csv: bool,
    pub summary_json: bool,
    pub plot_script: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            truth_csv: true,
            estimate_csv: true,
            diagnostics_csv: true,
            measurements_csv: true,
            summary_json: true,
            plot_script: true,
        }
    }
}

impl OutputConfig {
    pub fn none() -> Self {
        OutputConfig {
            dir: None,
            truth_csv: false,
            estimate_csv: false,
            diagnostics_csv: false,
            measurements_csv: false,
            summary_json: false,
            plot_script: false,
        }
    }

    pub fn any(&self) -> bool {
        self.truth_csv
            || self.estimate_csv
            || self.diagnostics_csv
            || self.measurements_csv
            || self.summary_json
            || self.plot_script
    }
}

fn default_window() -> f64 {
    30.0
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub h_s: f64,
    pub duration_s: f64,
    /// Length of the trailing window used for summary statistics.
    #[serde(default = "default_window")]
    pub summary_window_s: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub body: BodyConfig,
    pub wrench: WrenchConfig,
    pub scene: SceneConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub gains: GainsConfig,
    pub init_truth: TruthInitConfig,
    pub init_estimate: EstimateInitConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Initial estimate in SI units, resolved against the initial truth later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialEstimate {
    Absolute { pose: Pose, xi_hat: GeneralizedVelocity },
    Relative { q_err: Vec3, x_err: Vec3, phi: GeneralizedVelocity },
}

/// A validated configuration in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub h: f64,
    pub n_steps: usize,
    pub summary_window: f64,
    pub body: BodyParams,
    pub wrench: WrenchProfile,
    pub scene: Scene,
    pub visibility: Visibility,
    pub weights: WeightRule,
    pub noise: NoiseSpec,
    pub gains: EstimatorGains,
    pub init_truth: TrueState,
    pub init_estimate: InitialEstimate,
    pub solver: SolverConfig,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::from(a)
}

fn finite(field: &str, xs: &[f64]) -> Result<(), ConfigError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(field, "non-finite value"))
    }
}

impl ExperimentConfig {
    /// Every §6 value of the reference experiment.
    pub fn paper_sec6() -> Self {
        let s = 10.0;
        let mut beacons = Vec::with_capacity(8);
        for x in [-s, s] {
            for y in [-s, s] {
                for z in [-s, s] {
                    beacons.push([x, y, z]);
                }
            }
        }
        let axis = [3.0 / 7.0, -6.0 / 7.0, 2.0 / 7.0];
        let angle = std::f64::consts::FRAC_PI_4;
        ExperimentConfig {
            h_s: 0.01,
            duration_s: 60.0,
            summary_window_s: 30.0,
            seeds: (1..=20).collect(),
            body: BodyConfig {
                mass_kg: 0.42,
                inertia_kg_m2: [[51.2e-3, 0.0, 0.0], [0.0, 60.2e-3, 0.0], [0.0, 0.0, 59.6e-3]],
            },
            wrench: WrenchConfig::Sinusoid {
                force_n: [
                    HarmonicConfig {
                        cos_amp_n: 10e-3,
                        sin_amp_n: 0.0,
                        freq_rad_s: 0.1,
                    },
                    HarmonicConfig {
                        cos_amp_n: 0.0,
                        sin_amp_n: 2e-3,
                        freq_rad_s: 0.2,
                    },
                    HarmonicConfig {
                        cos_amp_n: 0.0,
                        sin_amp_n: -2e-3,
                        freq_rad_s: 0.5,
                    },
                ],
                torque_scale_m: 1e-6,
            },
            scene: SceneConfig {
                beacons_m: beacons,
                inertial_dirs: vec![[0.0, 0.0, -1.0], [0.1, 0.975, -0.2]],
                visibility: Visibility::All,
                weights: WeightRule::Normalized,
            },
            noise: NoiseConfig {
                enabled: true,
                dir_bound_deg: 2.4,
                gyro_bound_deg_s: 0.97,
                vel_bound_m_s: 0.025,
            },
            gains: GainsConfig {
                m: 1.5,
                l: 0.1,
                k_p: 150.0,
                kappa: 100.0,
            },
            init_truth: TruthInitConfig {
                attitude_rotvec_rad: axis.map(|a| a * angle),
                position_m: [2.5, 0.5, -3.0],
                omega_rad_s: [0.2, -0.05, 0.1],
                velocity_m_s: [-0.05, 0.15, 0.03],
            },
            init_estimate: EstimateInitConfig::Absolute {
                attitude_rotvec_rad: [0.0; 3],
                position_m: [0.0; 3],
                omega_rad_s: [0.1, 0.45, 0.05],
                velocity_m_s: [2.05, 0.64, 1.29],
            },
            solver: SolverSettings::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "paper_sec6" => Ok(Self::paper_sec6()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolve().map(|_| ())
    }

    /// Number of filter steps, checking that the duration is a whole number of steps.
    pub fn n_steps(&self) -> Result<usize, ConfigError> {
        if !(self.h_s.is_finite() && self.h_s > 0.0) {
            return Err(invalid("h_s", format!("must be positive, got {}", self.h_s)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s", format!("must be positive, got {}", self.duration_s)));
        }
        let ratio = self.duration_s / self.h_s;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * n.max(1.0) {
            return Err(invalid(
                "duration_s",
                format!("{} s is not a whole number of {} s steps", self.duration_s, self.h_s),
            ));
        }
        Ok(n as usize)
    }

    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        let n_steps = self.n_steps()?;
        if !(self.summary_window_s.is_finite() && self.summary_window_s >= 0.0) {
            return Err(invalid("summary_window_s", "must be non-negative"));
        }

        let inertia = Mat3::from_fn(|r, c| self.body.inertia_kg_m2[r][c]);
        let body = BodyParams::new(self.body.mass_kg, inertia).map_err(|e| invalid("body", e.to_string()))?;

        let wrench = match &self.wrench {
            WrenchConfig::Zero => WrenchProfile::Zero,
            WrenchConfig::Sinusoid {
                force_n,
                torque_scale_m,
            } => {
                for (k, h) in force_n.iter().enumerate() {
                    finite(&format!("wrench.force_n[{k}]"), &[h.cos_amp_n, h.sin_amp_n, h.freq_rad_s])?;
                }
                finite("wrench.torque_scale_m", &[*torque_scale_m])?;
                WrenchProfile::Sinusoid {
                    force: force_n.map(|h| Harmonic {
                        cos_amp: h.cos_amp_n,
                        sin_amp: h.sin_amp_n,
                        freq: h.freq_rad_s,
                    }),
                    torque_scale: *torque_scale_m,
                }
            }
            WrenchConfig::Tabulated { samples } => {
                for (k, s) in samples.iter().enumerate() {
                    let mut all = vec![s.t_s];
                    all.extend(s.force_n);
                    all.extend(s.torque_n_m);
                    finite(&format!("wrench.samples[{k}]"), &all)?;
                }
                let samples = samples
                    .iter()
                    .map(|s| WrenchSample {
                        t: s.t_s,
                        force: s.force_n,
                        torque: s.torque_n_m,
                    })
                    .collect();
                WrenchProfile::tabulated(samples).map_err(|e| invalid("wrench.samples", e.to_string()))?
            }
        };

        let scene = Scene::new(
            self.scene.beacons_m.iter().copied().map(v3).collect(),
            self.scene.inertial_dirs.iter().copied().map(v3).collect(),
            Vec::new(),
        )
        .map_err(|e| invalid("scene", e.to_string()))?;
        let nb = scene.beacons().len();
        let ni = scene.inertial_dirs().len();
        let sets: Vec<Vec<usize>> = match &self.scene.visibility {
            Visibility::All => vec![(0..nb).collect()],
            Visibility::Fixed { beacons } => vec![beacons.clone()],
            Visibility::Cycle { sets, period_steps } => {
                if sets.is_empty() {
                    return Err(invalid("scene.visibility.sets", "at least one set required"));
                }
                if *period_steps == 0 {
                    return Err(invalid("scene.visibility.period_steps", "must be positive"));
                }
                sets.clone()
            }
        };
        for (k, set) in sets.iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&j| j >= nb) {
                return Err(invalid(
                    "scene.visibility",
                    format!("set {k} references beacon {bad}, only {nb} defined"),
                ));
            }
            if !crate::measurement::observability_check(set.len(), ni) {
                return Err(invalid(
                    "scene.visibility",
                    format!("set {k} with {} beacons and {ni} inertial directions is unobservable", set.len()),
                ));
            }
        }

        let nc = &self.noise;
        for (field, v) in [
            ("noise.dir_bound_deg", nc.dir_bound_deg),
            ("noise.gyro_bound_deg_s", nc.gyro_bound_deg_s),
            ("noise.vel_bound_m_s", nc.vel_bound_m_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("must be a non-negative number, got {v}")));
            }
        }
        let noise = if nc.enabled {
            NoiseSpec {
                dir_bound: nc.dir_bound_deg.to_radians(),
                gyro_bound: nc.gyro_bound_deg_s.to_radians(),
                vel_bound: nc.vel_bound_m_s,
                seed: 0,
            }
        } else {
            NoiseSpec::none()
        };

        let gains = EstimatorGains {
            m_gain: self.gains.m,
            l_gain: self.gains.l,
            k_p: self.gains.k_p,
            kappa: self.gains.kappa,
        };
        gains.validate().map_err(|e| invalid("gains", e.to_string()))?;

        let t = &self.init_truth;
        for (field, v) in [
            ("init_truth.attitude_rotvec_rad", t.attitude_rotvec_rad),
            ("init_truth.position_m", t.position_m),
            ("init_truth.omega_rad_s", t.omega_rad_s),
            ("init_truth.velocity_m_s", t.velocity_m_s),
        ] {
            finite(field, &v)?;
        }
        let init_truth = TrueState {
            pose: Pose::new(exp_so3(&v3(t.attitude_rotvec_rad)), v3(t.position_m)),
            xi: GeneralizedVelocity::new(v3(t.omega_rad_s), v3(t.velocity_m_s)),
            t: 0.0,
        };

        let init_estimate = match self.init_estimate {
            EstimateInitConfig::Absolute {
                attitude_rotvec_rad,
                position_m,
                omega_rad_s,
                velocity_m_s,
            } => {
                for v in [attitude_rotvec_rad, position_m, omega_rad_s, velocity_m_s] {
                    finite("init_estimate", &v)?;
                }
                InitialEstimate::Absolute {
                    pose: Pose::new(exp_so3(&v3(attitude_rotvec_rad)), v3(position_m)),
                    xi_hat: GeneralizedVelocity::new(v3(omega_rad_s), v3(velocity_m_s)),
                }
            }
            EstimateInitConfig::Relative {
                attitude_error_rotvec_rad,
                position_error_m,
                omega_error_rad_s,
                velocity_error_m_s,
            } => {
                for v in [attitude_error_rotvec_rad, position_error_m, omega_error_rad_s, velocity_error_m_s] {
                    finite("init_estimate", &v)?;
                }
                InitialEstimate::Relative {
                    q_err: v3(attitude_error_rotvec_rad),
                    x_err: v3(position_error_m),
                    phi: GeneralizedVelocity::new(v3(omega_error_rad_s), v3(velocity_error_m_s)),
                }
            }
        };

        let s = &self.solver;
        if !(s.tol.is_finite() && s.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if s.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be at least 1"));
        }
        if !(s.damping.is_finite() && s.damping > 0.0 && s.damping <= 1.0) {
            return Err(invalid("solver.damping", "must lie in (0, 1]"));
        }
        let solver = SolverConfig {
            tol: s.tol,
            max_iter: s.max_iter,
            damping: s.damping,
            spectral_relaxation: s.spectral_relaxation,
        };

        Ok(Experiment {
            h: self.h_s,
            n_steps,
            summary_window: self.summary_window_s,
            body,
            wrench,
            scene,
            visibility: self.scene.visibility.clone(),
            weights: self.scene.weights,
            noise,
            gains,
            init_truth,
            init_estimate,
            solver,
        })
    }
}

/// Reads, parses and validates a TOML config.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    ExperimentConfig::from_toml_str(&text, path)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<(), ConfigError> {
    fs::write(path, cfg.to_toml_string()).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
