//! Poses, SO(3) utilities and the ideal pinhole camera.
//!
//! Orientations are axis-angle 3-vectors. Conversions go through the Rodrigues
//! formula, with Taylor expansions below [`SMALL_ANGLE`] so that the
//! `sin(θ)/θ` style coefficients stay accurate near the identity.

use nalgebra::Vector2;

use crate::{Error, Mat3, Result, Vec3, Vec6};

/// Below this rotation angle the series expansions are used.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation matrix of an axis-angle vector.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, one_minus_cos_over_sq(theta))
    };
    Mat3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation matrix, magnitude in `[0, π]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // v = sin(θ) * axis
    let v = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let sin = v.norm();
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        return v * (1.0 + theta * theta / 6.0);
    }
    if cos > -0.9 {
        return v * (theta / sin);
    }

    // Near a half-turn sin(θ) carries too little precision; recover the axis
    // from the symmetric part, (R + Rᵀ)/2 - cos(θ) I = (1 - cos θ) a aᵀ.
    let sym = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
    let j = (0..3).max_by(|&i, &k| sym[(i, i)].total_cmp(&sym[(k, k)])).unwrap_or(0);
    let mut axis: Vec3 = sym.column(j).into_owned();
    let n = axis.norm();
    if n > 0.0 {
        axis /= n;
    }
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3): `exp(w + δ) ≈ exp(w) exp(J_r(w) δ)`.
pub fn right_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (one_minus_cos_over_sq(theta), theta_minus_sin_over_cube(theta))
    };
    Mat3::identity() - k * a + k * k * b
}

/// `(1 - cos θ) / θ²` without cancellation.
fn one_minus_cos_over_sq(theta: f64) -> f64 {
    let s = (0.5 * theta).sin() / theta;
    2.0 * s * s
}

/// `(θ - sin θ) / θ³`, Taylor series where the direct form cancels.
fn theta_minus_sin_over_cube(theta: f64) -> f64 {
    let t2 = theta * theta;
    if theta < 1e-2 {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362_880.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    }
}

/// Rewrites an axis-angle vector so its magnitude lies in `[0, π]`.
///
/// A magnitude θ > π becomes the same rotation of magnitude 2π - θ about the
/// negated axis.
pub fn canonicalize_axis_angle(w: &Vec3) -> Vec3 {
    let theta = w.norm();
    if theta <= std::f64::consts::PI {
        return *w;
    }
    let axis = w / theta;
    let mut reduced = theta.rem_euclid(std::f64::consts::TAU);
    if reduced > std::f64::consts::PI {
        reduced -= std::f64::consts::TAU;
    }
    axis * reduced
}

/// Geodesic distance on SO(3) between two axis-angle rotations, in `[0, π]`.
///
/// Equal to `arccos((tr(R_aᵀ R_b) - 1) / 2)`; evaluated through `atan2` so the
/// result keeps full precision near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let rel = exp_so3(a).transpose() * exp_so3(b);
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let v = Vec3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    ) * 0.5;
    v.norm().atan2(cos)
}

/// Relative rotation `log(R_aᵀ R_b)` as an axis-angle vector.
pub fn relative_rotation(a: &Vec3, b: &Vec3) -> Vec3 {
    log_so3(&(exp_so3(a).transpose() * exp_so3(b)))
}

/// Geodesic interpolation: `a` composed with fraction `s` of the rotation
/// from `a` to `b`.
pub fn interpolate_orientation(a: &Vec3, b: &Vec3, s: f64) -> Vec3 {
    if s <= 0.0 {
        return *a;
    }
    if s >= 1.0 {
        return *b;
    }
    let rel = relative_rotation(a, b);
    log_so3(&(exp_so3(a) * exp_so3(&(rel * s))))
}

/// Position (meters) and axis-angle orientation (radians) of the tool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Vec3,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Vec3) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vec6(&self) -> Vec6 {
        let mut v = Vec6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.orientation);
        v
    }

    pub fn canonical(&self) -> Self {
        Self::new(self.position, canonicalize_axis_angle(&self.orientation))
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.orientation.iter())
            .all(|x| x.is_finite())
    }

    pub fn rotation(&self) -> Mat3 {
        exp_so3(&self.orientation)
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, local: &Vec3) -> Vec3 {
        self.rotation() * local + self.position
    }

    /// Composition `self ∘ other`, with `other` expressed in this pose's frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = self.rotation();
        Pose::new(r * other.position + self.position, log_so3(&(r * other.rotation())))
    }
}

/// Ideal pinhole camera. `pose` maps camera coordinates to world coordinates;
/// the optical axis is the camera +z axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pose: Pose,
    rotation: Mat3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraModel {
    pub fn new(pose: Pose, fx: f64, fy: f64, principal_point: (f64, f64), image_size: (f64, f64)) -> Result<Self> {
        let (cx, cy) = principal_point;
        let (width, height) = image_size;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidInput(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(0.0..=width).contains(&cx) || !(0.0..=height).contains(&cy) {
            return Err(Error::InvalidInput(format!(
                "principal point ({cx}, {cy}) outside the {width}x{height} image"
            )));
        }
        if !pose.is_finite() {
            return Err(Error::InvalidInput("camera pose is not finite".into()));
        }
        Ok(Self {
            rotation: pose.rotation(),
            pose,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    /// Camera-to-world rotation.
    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Same intrinsics, different extrinsics.
    pub fn with_pose(&self, pose: Pose) -> Self {
        Self {
            rotation: pose.rotation(),
            pose,
            ..self.clone()
        }
    }

    pub fn to_camera_frame(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.pose.position)
    }

    pub fn to_world_frame(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation * p_cam + self.pose.position
    }

    /// z-coordinate of a world point in the camera frame.
    pub fn camera_depth(&self, p: &Vec3) -> f64 {
        self.rotation.column(2).dot(&(p - self.pose.position))
    }

    /// Pixel coordinates of a world point.
    pub fn project(&self, p: &Vec3) -> Result<Vector2<f64>> {
        let pc = self.to_camera_frame(p);
        if pc.z <= 0.0 {
            return Err(Error::NonPositiveDepth { depth: pc.z });
        }
        Ok(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// World point at `depth` along the ray through `pixel`.
    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64) -> Vec3 {
        let pc = Vec3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        );
        self.to_world_frame(&pc)
    }

    /// Reference point for field-of-view distances: the principal point.
    pub fn image_center(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.width.hypot(self.height)
    }

    /// True when `p` is in front of the camera and projects inside the image.
    pub fn sees(&self, p: &Vec3) -> bool {
        match self.project(p) {
            Ok(px) => px.x >= 0.0 && px.x <= self.width && px.y >= 0.0 && px.y <= self.height,
            Err(_) => false,
        }
    }
}

/// Piecewise-constant camera assignment over trajectory timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSchedule {
    entries: Vec<(usize, CameraModel)>,
}

impl CameraSchedule {
    pub fn new(entries: Vec<(usize, CameraModel)>) -> Result<Self> {
        match entries.first() {
            None => return Err(Error::InvalidInput("camera schedule is empty".into())),
            Some((0, _)) => {}
            Some((i, _)) => {
                return Err(Error::InvalidInput(format!(
                    "camera schedule must start at index 0, starts at {i}"
                )))
            }
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidInput(
                "camera schedule indices must be strictly increasing".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn constant(camera: CameraModel) -> Self {
        Self {
            entries: vec![(0, camera)],
        }
    }

    pub fn entries(&self) -> &[(usize, CameraModel)] {
        &self.entries
    }

    /// Camera active at timestep `t`.
    pub fn camera_at(&self, t: usize) -> &CameraModel {
        let idx = self.entries.partition_point(|(i, _)| *i <= t);
        &self.entries[idx.saturating_sub(1)].1
    }

    /// True if the active camera switches exactly at `t`.
    pub fn changes_at(&self, t: usize) -> bool {
        t > 0 && self.entries.iter().any(|(i, _)| *i == t)
    }

    /// Schedule re-indexed so that timestep `step` becomes 0.
    pub fn suffix(&self, step: usize) -> Self {
        let mut entries = vec![(0, self.camera_at(step).clone())];
        entries.extend(
            self.entries
                .iter()
                .filter(|(i, _)| *i > step)
                .map(|(i, c)| (i - step, c.clone())),
        );
        Self { entries }
    }
}
