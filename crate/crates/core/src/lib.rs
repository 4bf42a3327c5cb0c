//! Uncertainty-aware trajectory optimization for a camera-tracked tool.
//!
//! A trajectory of 6-DoF waypoints is scored by propagating a Gaussian belief
//! through an extended Kalman filter whose motion and observation noise depend
//! on the waypoints themselves (step length, depth from the camera, distance
//! from the image center, misalignment with a preferred orientation). The
//! optimizer reshapes the interior waypoints so that the final covariance has
//! minimal trace, which also lowers an upper bound on the final entropy.
//!
//! Module map:
//! - [`geometry`]: poses, SO(3) helpers, pinhole cameras.
//! - [`noise_models`]: state-dependent motion and observation covariances.
//! - [`belief_engine`]: EKF predict/update and maximum-likelihood propagation.
//! - [`optimizer`]: loss, analytic gradients and the L-BFGS driver.
//! - [`sim_harness`]: scenario sampling, noisy rollouts and the ablation protocol.
//! - [`io`]: scenario files and report serialization.

pub mod belief_engine;
pub mod error;
pub mod geometry;
pub mod io;
pub mod noise_models;
pub mod optimizer;
pub mod sim_harness;

pub use error::{Error, Result};

/// 3-vector alias used throughout.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 6-vector alias: position followed by axis-angle orientation.
pub type Vec6 = nalgebra::Vector6<f64>;
/// 3x3 matrix alias.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// 6x6 matrix alias.
pub type Mat6 = nalgebra::Matrix6<f64>;
