//! Discrete-time variational pose estimation on SE(3).
//!
//! Modules, bottom up:
//!
//! - [`liegroup`]: SO(3)/SE(3) primitives.
//! - [`dynamics`]: rigid-body truth simulation and the pose step shared with the filter.
//! - [`measurement`]: beacon/inertial direction measurements, noise and weights.
//! - [`filter`]: the implicit variational filter and Lyapunov diagnostics.
//! - [`harness`]: configuration, experiment runs, batches, CSV output and replay.

pub mod dynamics;
pub mod filter;
pub mod harness;
pub mod liegroup;
pub mod measurement;

pub use dynamics::{simulate_truth, step_pose, BodyParams, TrueState, WrenchProfile};
pub use filter::{filter_step, EstimatorGains, EstimatorState, PoseFilter, SolverConfig};
pub use liegroup::{GeneralizedVelocity, Pose, Rotation};
pub use measurement::{MeasurementFrame, Scene};
