//! EKF predict/update over the 6-vector pose state and deterministic belief
//! propagation under maximum-likelihood observations.
//!
//! The motion model sets the mean to the commanded waypoint (F = Q = I) and the
//! observation model sees the full pose (H = R = I); all structure lives in the
//! state-dependent covariances. Orientation stays in flat axis-angle
//! coordinates between steps.

use crate::geometry::{CameraModel, CameraSchedule, Pose};
use crate::noise_models::NoiseModel;
use crate::optimizer::Trajectory;
use crate::{Error, Mat6, Result, Vec6};

/// State dimension.
pub const STATE_DIM: usize = 6;

/// `(n/2)(1 + ln 2π)` for n = 6.
pub fn entropy_constant() -> f64 {
    0.5 * STATE_DIM as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Belief {
    pub mean: Vec6,
    pub covariance: Mat6,
}

impl Belief {
    pub fn new(mean: Vec6, covariance: Mat6) -> Self {
        Self {
            mean,
            covariance: symmetrize(&covariance),
        }
    }

    pub fn at_pose(pose: &Pose, covariance: Mat6) -> Self {
        Self::new(pose.to_vec6(), covariance)
    }

    pub fn mean_pose(&self) -> Pose {
        Pose::from_vec6(&self.mean)
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }
}

pub fn symmetrize(m: &Mat6) -> Mat6 {
    (m + m.transpose()) * 0.5
}

/// Predict with an explicit motion covariance; the mean jumps to `target`.
pub fn predict_with(b: &Belief, target: &Vec6, motion_cov: &Mat6) -> Belief {
    Belief {
        mean: *target,
        covariance: symmetrize(&(b.covariance + motion_cov)),
    }
}

/// EKF predict for the step `from -> to`.
pub fn predict(b: &Belief, from: &Pose, to: &Pose, noise: &impl NoiseModel) -> Belief {
    predict_with(b, &to.to_vec6(), &noise.motion_cov(from, to))
}

/// Kalman update with an explicit observation covariance. Returns the
/// posterior and the gain `K = Σ (Σ + V)⁻¹`.
///
/// Without an observation the maximum-likelihood one is assumed, so the mean
/// is unchanged.
pub fn update_with(b: &Belief, obs_cov: &Mat6, observation: Option<&Vec6>) -> Result<(Belief, Mat6)> {
    let p = &b.covariance;
    if p.iter().all(|&x| x == 0.0) {
        return Ok((*b, Mat6::zeros()));
    }
    if obs_cov.iter().all(|&x| x == 0.0) {
        // perfect observation: K = I exactly
        if p.cholesky().is_none() {
            return Err(Error::SingularInnovation);
        }
        let mean = observation.copied().unwrap_or(b.mean);
        return Ok((
            Belief {
                mean,
                covariance: Mat6::zeros(),
            },
            Mat6::identity(),
        ));
    }
    let s = symmetrize(&(p + obs_cov));
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K = P S⁻¹ = (S⁻¹ P)ᵀ for symmetric P and S.
    let gain = chol.solve(p).transpose();
    if !gain.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    let a = Mat6::identity() - gain;
    // Joseph form keeps the result PSD under round-off.
    let cov = a * p * a.transpose() + gain * obs_cov * gain.transpose();
    let mean = match observation {
        Some(z) => b.mean + gain * (z - b.mean),
        None => b.mean,
    };
    Ok((
        Belief {
            mean,
            covariance: symmetrize(&cov),
        },
        gain,
    ))
}

/// EKF update with the observation covariance evaluated at the predicted mean.
pub fn update(
    b: &Belief,
    camera: &CameraModel,
    noise: &impl NoiseModel,
    observation: Option<&Vec6>,
) -> Result<(Belief, Mat6)> {
    let v = noise.obs_cov(&b.mean_pose(), camera)?;
    update_with(b, &v, observation)
}

/// One predict/update cycle of a propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefStep {
    pub predicted: Belief,
    pub updated: Belief,
    pub motion_cov: Mat6,
    pub obs_cov: Mat6,
    pub gain: Mat6,
}

/// Initial update at the start waypoint, if performed.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialUpdate {
    pub obs_cov: Mat6,
    pub gain: Mat6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrace {
    pub prior: Belief,
    pub initial_update: Option<InitialUpdate>,
    /// Belief at the start waypoint after the optional initial update.
    pub initial: Belief,
    /// One entry per trajectory step; `steps.len()` is the horizon.
    pub steps: Vec<BeliefStep>,
}

impl BeliefTrace {
    pub fn final_belief(&self) -> &Belief {
        self.steps.last().map_or(&self.initial, |s| &s.updated)
    }

    /// Updated belief at waypoint `t` (0 is the start).
    pub fn belief_at(&self, t: usize) -> &Belief {
        if t == 0 {
            &self.initial
        } else {
            &self.steps[t - 1].updated
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagateOptions {
    /// Fuse an observation at the start waypoint before the first motion.
    pub initial_update: bool,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self { initial_update: true }
    }
}

/// Deterministic belief propagation along `traj` with maximum-likelihood
/// observations. The prior mean is replaced by the start waypoint.
pub fn propagate(
    traj: &Trajectory,
    cams: &CameraSchedule,
    noise: &impl NoiseModel,
    prior: &Belief,
    options: PropagateOptions,
) -> Result<BeliefTrace> {
    let wps = traj.waypoints();
    let prior = Belief::at_pose(&wps[0], prior.covariance);
    let (initial, initial_update) = if options.initial_update {
        let v = noise.obs_cov(&wps[0], cams.camera_at(0)).map_err(|e| e.at_step(0))?;
        let (b, gain) = update_with(&prior, &v, None).map_err(|e| e.at_step(0))?;
        (b, Some(InitialUpdate { obs_cov: v, gain }))
    } else {
        (prior, None)
    };

    let mut steps = Vec::with_capacity(wps.len() - 1);
    let mut current = initial;
    for (t, pair) in wps.windows(2).enumerate() {
        let (from, to) = (&pair[0], &pair[1]);
        let motion_cov = noise.motion_cov(from, to);
        let predicted = predict_with(&current, &to.to_vec6(), &motion_cov);
        let obs_cov = noise.obs_cov(to, cams.camera_at(t + 1)).map_err(|e| e.at_step(t + 1))?;
        let (updated, gain) = update_with(&predicted, &obs_cov, None).map_err(|e| e.at_step(t + 1))?;
        steps.push(BeliefStep {
            predicted,
            updated,
            motion_cov,
            obs_cov,
            gain,
        });
        current = updated;
    }
    Ok(BeliefTrace {
        prior,
        initial_update,
        initial,
        steps,
    })
}

fn checked_log_eigenvalues(cov: &Mat6) -> Result<f64> {
    let eig = symmetrize(cov).symmetric_eigenvalues();
    let min = eig.min();
    if !(min > 0.0) {
        return Err(Error::NonPositiveDefinite { min_eigenvalue: min });
    }
    Ok(eig.iter().map(|l| l.ln()).sum())
}

/// Differential entropy (nats) of the Gaussian belief.
pub fn entropy(b: &Belief) -> Result<f64> {
    Ok(entropy_constant() + 0.5 * checked_log_eigenvalues(&b.covariance)?)
}

/// Entropy next to its trace bound `c + Tr(Σ)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBound {
    pub entropy: f64,
    pub bound: f64,
    pub log_det: f64,
    pub trace: f64,
    /// `ln|Σ| < Tr(Σ)`
    pub holds: bool,
}

pub fn check_entropy_bound(b: &Belief) -> Result<EntropyBound> {
    let log_det = checked_log_eigenvalues(&b.covariance)?;
    let trace = b.covariance.trace();
    let c = entropy_constant();
    Ok(EntropyBound {
        entropy: c + 0.5 * log_det,
        bound: c + 0.5 * trace,
        log_det,
        trace,
        holds: log_det < trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;
    use crate::noise_models::{min_eigenvalue, AblationMask, FrozenNoise, NoiseConfig, StateDependentNoise};
    use crate::Vec3;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn camera() -> CameraModel {
        CameraModel::new(Pose::identity(), 500.0, 500.0, (320.0, 240.0), (640.0, 480.0)).unwrap()
    }

    fn prior() -> Belief {
        Belief::new(Vec6::zeros(), Mat6::identity() * 1e-2)
    }

    fn line(n: usize) -> Trajectory {
        let wps = (0..=n)
            .map(|i| {
                let s = i as f64 / n as f64;
                Pose::new(
                    Vec3::new(-0.05 + 0.1 * s, 0.02, 0.2 + 0.05 * s),
                    Vec3::new(0.2, 0.3, 0.9 + 0.3 * s),
                )
            })
            .collect();
        Trajectory::new(wps).unwrap()
    }

    #[test]
    fn zero_motion_predict_is_identity() {
        let cfg = NoiseConfig::reference(Vec3::z());
        let x = Pose::new(Vec3::new(0.0, 0.0, 0.2), Vec3::new(0.1, 0.0, 0.4));
        let b = Belief::at_pose(&x, Mat6::identity() * 1e-2);
        let p = predict(&b, &x, &x, &StateDependentNoise::full(cfg));
        assert_eq!(p, b);
    }

    #[test]
    fn predict_adds_motion_covariance() {
        let b = prior();
        let p = predict_with(&b, &Vec6::zeros(), &(Mat6::identity() * 1e-5));
        assert_abs_diff_eq!(p.covariance, Mat6::identity() * 1.001e-2, epsilon = 1e-16);
    }

    #[test]
    fn zero_noise_predicts_compose() {
        let b = Belief::new(
            Vec6::zeros(),
            Mat6::from_diagonal(&Vec6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)) * 1e-3,
        );
        let a = Pose::new(Vec3::new(0.0, 0.0, 0.2), Vec3::new(0.1, 0.2, 0.3));
        let m = Pose::new(Vec3::new(0.1, 0.0, 0.2), Vec3::new(0.1, 0.5, 0.3));
        let c = Pose::new(Vec3::new(0.1, 0.1, 0.25), Vec3::new(0.4, 0.5, 0.3));
        let noise = StateDependentNoise::full(NoiseConfig::noiseless(Vec3::z()));
        let two = predict(&predict(&b, &a, &m, &noise), &m, &c, &noise);
        let one = predict(&b, &a, &c, &noise);
        assert_eq!(two.covariance, one.covariance);
        assert_eq!(two.mean, one.mean);
    }

    #[test]
    fn scalar_update_halves_variance() {
        let b = prior();
        let (post, gain) = update_with(&b, &(Mat6::identity() * 1e-2), None).unwrap();
        assert_abs_diff_eq!(post.covariance, Mat6::identity() * 5e-3, epsilon = 1e-16);
        assert_abs_diff_eq!(gain, Mat6::identity() * 0.5, epsilon = 1e-15);
        assert_eq!(post.mean, b.mean);
    }

    #[test]
    fn uninformative_update_keeps_belief() {
        let b = Belief::new(Vec6::repeat(0.3), Mat6::identity() * 1e-2);
        let z = Vec6::repeat(1.0);
        let (post, gain) = update_with(&b, &(Mat6::identity() * 1e12), Some(&z)).unwrap();
        assert!(gain.amax() < 1e-13);
        assert_abs_diff_eq!(post.covariance, b.covariance, epsilon = 1e-15);
        assert_abs_diff_eq!(post.mean, b.mean, epsilon = 1e-13);
    }

    #[test]
    fn perfect_observation_zeroes_covariance() {
        let b = Belief::new(Vec6::repeat(0.3), Mat6::identity() * 1e-2);
        let (post, _) = update_with(&b, &Mat6::zeros(), None).unwrap();
        assert_abs_diff_eq!(post.covariance, Mat6::zeros(), epsilon = 1e-18);
        assert_eq!(post.mean, b.mean);
    }

    #[test]
    fn observation_moves_mean_by_gain() {
        let b = Belief::new(Vec6::zeros(), Mat6::identity() * 1e-2);
        let z = Vec6::repeat(1.0);
        let (post, _) = update_with(&b, &(Mat6::identity() * 1e-2), Some(&z)).unwrap();
        assert_abs_diff_eq!(post.mean, Vec6::repeat(0.5), epsilon = 1e-15);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let mut cov = Mat6::zeros();
        cov[(0, 0)] = 1e-2;
        let b = Belief::new(Vec6::zeros(), cov);
        assert_eq!(
            update_with(&b, &Mat6::zeros(), None).unwrap_err(),
            Error::SingularInnovation
        );
    }

    #[test]
    fn one_step_zero_motion_is_single_update() {
        let cfg = NoiseConfig::reference(Vec3::new(0.1, 0.2, 0.9));
        let noise = StateDependentNoise::full(cfg);
        let x = Pose::new(Vec3::new(0.01, 0.0, 0.22), Vec3::new(0.2, 0.3, 0.8));
        let traj = Trajectory::new(vec![x, x]).unwrap();
        let cams = CameraSchedule::constant(camera());
        let no_init = PropagateOptions { initial_update: false };
        let trace = propagate(&traj, &cams, &noise, &prior(), no_init).unwrap();
        let (expected, _) = update(&Belief::at_pose(&x, prior().covariance), &camera(), &noise, None).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(*trace.final_belief(), expected);
    }

    #[test]
    fn noiseless_propagation_collapses() {
        let noise = StateDependentNoise::new(NoiseConfig::noiseless(Vec3::z()), AblationMask::ALL);
        let trace = propagate(
            &line(5),
            &CameraSchedule::constant(camera()),
            &noise,
            &prior(),
            Default::default(),
        )
        .unwrap();
        assert_eq!(trace.final_belief().covariance, Mat6::zeros());
    }

    #[test]
    fn propagation_is_deterministic_and_well_formed() {
        let noise = StateDependentNoise::full(NoiseConfig::reference(Vec3::new(0.1, 0.2, 0.9)));
        let cams = CameraSchedule::constant(camera());
        let a = propagate(&line(8), &cams, &noise, &prior(), Default::default()).unwrap();
        let b = propagate(&line(8), &cams, &noise, &prior(), Default::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 8);
        for s in &a.steps {
            for m in [s.predicted.covariance, s.updated.covariance] {
                assert!((m - m.transpose()).amax() < 1e-10);
                assert!(min_eigenvalue(&m) > -1e-10);
            }
            for i in 0..6 {
                assert!(s.updated.covariance[(i, i)] <= s.predicted.covariance[(i, i)]);
            }
            assert!(check_entropy_bound(&s.updated).unwrap().holds);
        }
    }

    #[test]
    fn propagation_reports_failing_step() {
        let noise = StateDependentNoise::full(NoiseConfig::reference(Vec3::z()));
        let mut wps = line(4).waypoints().to_vec();
        wps[2].position.z = -0.1;
        let traj = Trajectory::new(wps).unwrap();
        let err = propagate(
            &traj,
            &CameraSchedule::constant(camera()),
            &noise,
            &prior(),
            Default::default(),
        )
        .unwrap_err();
        match err {
            Error::AtStep { step, source } => {
                assert_eq!(step, 2);
                assert!(matches!(*source, Error::NonPositiveDepth { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frozen_noise_propagation_matches_closed_form_riccati() {
        // scalar Riccati recursion on an isotropic system
        let (w, v) = (2e-4, 3e-3);
        let noise = FrozenNoise {
            motion: Mat6::identity() * w,
            observation: Mat6::identity() * v,
        };
        let trace = propagate(
            &line(6),
            &CameraSchedule::constant(camera()),
            &noise,
            &prior(),
            Default::default(),
        )
        .unwrap();
        let mut s: f64 = 1e-2;
        s = s * v / (s + v);
        for _ in 0..6 {
            let p = s + w;
            s = p * v / (p + v);
        }
        assert_abs_diff_eq!(trace.final_belief().covariance, Mat6::identity() * s, epsilon = 1e-15);
    }

    #[test]
    fn entropy_examples() {
        let unit = Belief::new(Vec6::zeros(), Mat6::identity());
        let h = entropy(&unit).unwrap();
        assert_abs_diff_eq!(h, 3.0 * (1.0 + (2.0 * std::f64::consts::PI).ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(h, 8.5136, epsilon = 1e-4);
        let scaled = Belief::new(Vec6::zeros(), Mat6::identity() * 7.0);
        assert_abs_diff_eq!(entropy(&scaled).unwrap() - h, 3.0 * 7.0f64.ln(), epsilon = 1e-12);
        let mut cov = Mat6::identity();
        cov[(4, 4)] = 0.0;
        assert!(matches!(
            entropy(&Belief::new(Vec6::zeros(), cov)),
            Err(Error::NonPositiveDefinite { .. })
        ));
    }

    #[test]
    fn entropy_bound_examples() {
        let unit = check_entropy_bound(&Belief::new(Vec6::zeros(), Mat6::identity())).unwrap();
        assert!(unit.holds);
        assert_abs_diff_eq!(unit.log_det, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(unit.trace, 6.0);
        let small = check_entropy_bound(&Belief::new(Vec6::zeros(), Mat6::identity() * 1e-4)).unwrap();
        assert!(small.holds);
        assert_abs_diff_eq!(small.log_det, -55.262, epsilon = 1e-3);
        assert!(small.entropy < small.bound);
    }

    proptest! {
        #[test]
        fn update_never_inflates_the_diagonal(
            a in prop::array::uniform32(-1.0..1.0f64),
            b in prop::array::uniform32(-1.0..1.0f64),
            sa in 1e-5..1.0f64, sb in 0.0..1.0f64,
        ) {
            let ma = nalgebra::Matrix6::from_fn(|i, j| a[(i * 6 + j) % 32]);
            let mb = nalgebra::Matrix6::from_fn(|i, j| b[(i * 6 + j) % 32]);
            let p = ma * ma.transpose() * sa + Mat6::identity() * 1e-6;
            let v = mb * mb.transpose() * sb;
            let (post, _) = update_with(&Belief::new(Vec6::zeros(), p), &v, None).unwrap();
            let q = post.covariance;
            prop_assert!((q - q.transpose()).amax() < 1e-10);
            prop_assert!(min_eigenvalue(&q) > -1e-10);
            for i in 0..6 {
                prop_assert!(q[(i, i)] <= p[(i, i)] * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}
