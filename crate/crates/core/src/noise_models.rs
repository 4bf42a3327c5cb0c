//! State-dependent motion and observation covariances.
//!
//! Every covariance is a non-negative scalar factor times a base matrix:
//!
//! - motion: `‖Δp‖² W_p0 + A(o_t, o_t+1)² W_o0`
//! - observation: `(d - d*)² V_d0 + ‖I(x) - I_c‖² V_f0 + (1 - cos(o, o*))² V_o0`
//!
//! The factors are exposed separately, with gradients, because the analytic
//! loss gradient needs them.

use crate::geometry::{angle_between, relative_rotation, right_jacobian, CameraModel, Pose};
use crate::{Error, Mat6, Result, Vec3, Vec6};

/// Orientation vectors shorter than this carry no axis; the misalignment
/// factor is then taken as neutral (1).
pub const ZERO_ORIENTATION: f64 = 1e-9;

/// How pixel offsets from the image center are scaled before squaring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FovNormalization {
    /// Divide by half the image diagonal, so the factor is ≤ 1 inside the image.
    #[default]
    HalfDiagonal,
    /// Raw pixel distances.
    Pixels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub w_p0: Mat6,
    pub w_o0: Mat6,
    pub v_d0: Mat6,
    pub v_f0: Mat6,
    pub v_o0: Mat6,
    /// Ideal detection depth (m).
    pub d_star: f64,
    /// Preferred detection orientation (axis-angle, same frame as the state).
    pub o_star: Vec3,
    pub fov_normalization: FovNormalization,
}

impl NoiseConfig {
    /// The reference constants: W_p0 = W_o0 = 1e-3 I, V_d0 = 1e-1 I,
    /// V_f0 = 1e-2 I, V_o0 = 5e-3 I, d* = 0.15 m.
    pub fn reference(o_star: Vec3) -> Self {
        Self {
            w_p0: Mat6::identity() * 1e-3,
            w_o0: Mat6::identity() * 1e-3,
            v_d0: Mat6::identity() * 1e-1,
            v_f0: Mat6::identity() * 1e-2,
            v_o0: Mat6::identity() * 5e-3,
            d_star: 0.15,
            o_star,
            fov_normalization: FovNormalization::HalfDiagonal,
        }
    }

    /// All base matrices zero.
    pub fn noiseless(o_star: Vec3) -> Self {
        Self {
            w_p0: Mat6::zeros(),
            w_o0: Mat6::zeros(),
            v_d0: Mat6::zeros(),
            v_f0: Mat6::zeros(),
            v_o0: Mat6::zeros(),
            ..Self::reference(o_star)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in self.base_matrices() {
            if !m.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
            let min = min_eigenvalue(m);
            if min < -1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} is not positive semidefinite (min eigenvalue {min})"
                )));
            }
        }
        if !(self.d_star > 0.0 && self.d_star.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "d_star must be positive, got {}",
                self.d_star
            )));
        }
        if self.o_star.norm() < ZERO_ORIENTATION || !self.o_star.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("o_star must be a non-zero finite vector".into()));
        }
        Ok(())
    }

    pub fn base_matrices(&self) -> [(&'static str, &Mat6); 5] {
        [
            ("w_p0", &self.w_p0),
            ("w_o0", &self.w_o0),
            ("v_d0", &self.v_d0),
            ("v_f0", &self.v_f0),
            ("v_o0", &self.v_o0),
        ]
    }

    /// Every base covariance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w_p0: self.w_p0 * factor,
            w_o0: self.w_o0 * factor,
            v_d0: self.v_d0 * factor,
            v_f0: self.v_f0 * factor,
            v_o0: self.v_o0 * factor,
            ..self.clone()
        }
    }

    fn fov_scale(&self, camera: &CameraModel) -> f64 {
        match self.fov_normalization {
            FovNormalization::HalfDiagonal => camera.half_diagonal(),
            FovNormalization::Pixels => 1.0,
        }
    }
}

/// Switches for the observation-noise components and the pose loss. Only the
/// optimization objective reads the mask; evaluation always uses the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationMask {
    pub use_depth: bool,
    pub use_fov: bool,
    pub use_orientation: bool,
    pub use_pose_loss: bool,
}

impl AblationMask {
    pub const ALL: Self = Self {
        use_depth: true,
        use_fov: true,
        use_orientation: true,
        use_pose_loss: true,
    };

    pub const NONE: Self = Self {
        use_depth: false,
        use_fov: false,
        use_orientation: false,
        use_pose_loss: false,
    };
}

impl Default for AblationMask {
    fn default() -> Self {
        Self::ALL
    }
}

/// Scalar multipliers of the two motion base covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionFactors {
    /// `‖p_next - p‖²`
    pub translation: f64,
    /// `A(o, o_next)²`
    pub rotation: f64,
}

/// Gradients of [`MotionFactors`] with respect to both endpoint poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionFactorGradients {
    pub translation: [Vec6; 2],
    pub rotation: [Vec6; 2],
}

pub fn motion_factors(from: &Pose, to: &Pose) -> MotionFactors {
    let theta = angle_between(&from.orientation, &to.orientation);
    MotionFactors {
        translation: (to.position - from.position).norm_squared(),
        rotation: theta * theta,
    }
}

pub fn motion_factor_gradients(from: &Pose, to: &Pose) -> (MotionFactors, MotionFactorGradients) {
    let dp = to.position - from.position;
    let r = relative_rotation(&from.orientation, &to.orientation);
    let factors = MotionFactors {
        translation: dp.norm_squared(),
        rotation: r.norm_squared(),
    };
    // d|r|²/do_to = 2 J_r(o_to)ᵀ r and d|r|²/do_from = -2 J_r(o_from)ᵀ r, using
    // rᵀ J_l⁻¹(r) = rᵀ J_r⁻¹(r) = rᵀ.
    let g_to = right_jacobian(&to.orientation).transpose() * r * 2.0;
    let g_from = right_jacobian(&from.orientation).transpose() * r * -2.0;
    let grads = MotionFactorGradients {
        translation: [stack(&(-2.0 * dp), &Vec3::zeros()), stack(&(2.0 * dp), &Vec3::zeros())],
        rotation: [stack(&Vec3::zeros(), &g_from), stack(&Vec3::zeros(), &g_to)],
    };
    (factors, grads)
}

/// `W_t` for the step `from -> to`.
pub fn motion_cov(from: &Pose, to: &Pose, cfg: &NoiseConfig) -> Mat6 {
    let f = motion_factors(from, to);
    cfg.w_p0 * f.translation + cfg.w_o0 * f.rotation
}

/// Scalar multipliers of the three observation base covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationFactors {
    /// `(d - d*)²`
    pub depth: f64,
    /// `‖I(x) - I_c‖²`, normalized per [`FovNormalization`].
    pub fov: f64,
    /// `(1 - cos(o, o*))²`
    pub orientation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationFactorGradients {
    pub depth: Vec6,
    pub fov: Vec6,
    pub orientation: Vec6,
}

fn misalignment(o: &Vec3, o_star: &Vec3) -> (f64, Vec3) {
    let n = o.norm();
    if n < ZERO_ORIENTATION {
        return (1.0, Vec3::zeros());
    }
    let ns = o_star.norm();
    let cos = o.dot(o_star) / (n * ns);
    let dcos = o_star / (n * ns) - o * (cos / (n * n));
    let m = 1.0 - cos;
    (m * m, dcos * (-2.0 * m))
}

pub fn observation_factors(pose: &Pose, camera: &CameraModel, cfg: &NoiseConfig) -> Result<ObservationFactors> {
    Ok(observation_factor_gradients(pose, camera, cfg)?.0)
}

pub fn observation_factor_gradients(
    pose: &Pose,
    camera: &CameraModel,
    cfg: &NoiseConfig,
) -> Result<(ObservationFactors, ObservationFactorGradients)> {
    let pc = camera.to_camera_frame(&pose.position);
    if pc.z <= 0.0 {
        return Err(Error::NonPositiveDepth { depth: pc.z });
    }
    let rot = camera.rotation();

    let dd = pc.z - cfg.d_star;
    let depth_grad = rot.column(2) * (2.0 * dd);

    let n2 = cfg.fov_scale(camera).powi(2);
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let du = camera.fx * x / z;
    let dv = camera.fy * y / z;
    let fov = (du * du + dv * dv) / n2;
    let fov_grad_cam = Vec3::new(
        2.0 * camera.fx * du / z,
        2.0 * camera.fy * dv / z,
        -2.0 * (du * du + dv * dv) / z,
    ) / n2;
    let fov_grad = rot * fov_grad_cam;

    let (orientation, orient_grad) = misalignment(&pose.orientation, &cfg.o_star);

    Ok((
        ObservationFactors {
            depth: dd * dd,
            fov,
            orientation,
        },
        ObservationFactorGradients {
            depth: stack(&depth_grad.into_owned(), &Vec3::zeros()),
            fov: stack(&fov_grad, &Vec3::zeros()),
            orientation: stack(&Vec3::zeros(), &orient_grad),
        },
    ))
}

/// `V_t` at `pose`, with masked components dropped.
pub fn obs_cov(pose: &Pose, camera: &CameraModel, cfg: &NoiseConfig, mask: &AblationMask) -> Result<Mat6> {
    if !(mask.use_depth || mask.use_fov || mask.use_orientation) {
        return Ok(Mat6::zeros());
    }
    let f = observation_factors(pose, camera, cfg)?;
    let mut v = Mat6::zeros();
    if mask.use_depth {
        v += cfg.v_d0 * f.depth;
    }
    if mask.use_fov {
        v += cfg.v_f0 * f.fov;
    }
    if mask.use_orientation {
        v += cfg.v_o0 * f.orientation;
    }
    Ok(v)
}

/// Source of motion and observation covariances for filtering and simulation.
pub trait NoiseModel: Sync {
    fn motion_cov(&self, from: &Pose, to: &Pose) -> Mat6;
    fn obs_cov(&self, pose: &Pose, camera: &CameraModel) -> Result<Mat6>;
}

/// The state-dependent model, restricted by an ablation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDependentNoise {
    pub cfg: NoiseConfig,
    pub mask: AblationMask,
}

impl StateDependentNoise {
    pub fn new(cfg: NoiseConfig, mask: AblationMask) -> Self {
        Self { cfg, mask }
    }

    pub fn full(cfg: NoiseConfig) -> Self {
        Self::new(cfg, AblationMask::ALL)
    }
}

impl NoiseModel for StateDependentNoise {
    fn motion_cov(&self, from: &Pose, to: &Pose) -> Mat6 {
        motion_cov(from, to, &self.cfg)
    }

    fn obs_cov(&self, pose: &Pose, camera: &CameraModel) -> Result<Mat6> {
        obs_cov(pose, camera, &self.cfg, &self.mask)
    }
}

/// Constant covariances: the linear-Gaussian special case.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenNoise {
    pub motion: Mat6,
    pub observation: Mat6,
}

impl FrozenNoise {
    /// Freezes a state-dependent model at a given step and observation pose.
    pub fn at(model: &impl NoiseModel, from: &Pose, to: &Pose, camera: &CameraModel) -> Result<Self> {
        Ok(Self {
            motion: model.motion_cov(from, to),
            observation: model.obs_cov(to, camera)?,
        })
    }
}

impl NoiseModel for FrozenNoise {
    fn motion_cov(&self, _from: &Pose, _to: &Pose) -> Mat6 {
        self.motion
    }

    fn obs_cov(&self, _pose: &Pose, _camera: &CameraModel) -> Result<Mat6> {
        Ok(self.observation)
    }
}

pub(crate) fn stack(top: &Vec3, bottom: &Vec3) -> Vec6 {
    Vec6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// Smallest eigenvalue of a symmetric matrix (symmetric part is used).
pub fn min_eigenvalue(m: &Mat6) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}
