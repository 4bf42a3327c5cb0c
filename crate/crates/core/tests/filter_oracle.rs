//! Propagation checked against a scalar recurrence computed from scratch.

use nalgebra::{Matrix6, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surestep::belief_engine::{propagate, Belief, PropagateOptions};
use surestep::geometry::{CameraModel, CameraSchedule, Pose};
use surestep::noise_models::{NoiseConfig, StateDependentNoise};
use surestep::optimizer::Trajectory;

const W_P: f64 = 1e-3;
const W_O: f64 = 1e-3;
const V_D: f64 = 1e-1;
const V_F: f64 = 1e-2;
const V_O: f64 = 5e-3;
const D_STAR: f64 = 0.15;

fn step_variance(a: &Pose, b: &Pose) -> f64 {
    let ra = Rotation3::from_scaled_axis(a.orientation);
    let rb = Rotation3::from_scaled_axis(b.orientation);
    let angle = ra.rotation_to(&rb).angle();
    (b.position - a.position).norm_squared() * W_P + angle * angle * W_O
}

fn observation_variance(p: &Pose, cam_pos: &Vector3<f64>, cam_rot: &Rotation3<f64>, o_star: &Vector3<f64>) -> f64 {
    let (fx, fy, w, h) = (500.0, 450.0, 640.0, 480.0);
    let local = cam_rot.inverse() * (p.position - cam_pos);
    let depth = local.z;
    let du = fx * local.x / depth;
    let dv = fy * local.y / depth;
    let half_diag2 = (w * w + h * h) / 4.0;
    let cos = p.orientation.dot(o_star) / (p.orientation.norm() * o_star.norm());
    (depth - D_STAR).powi(2) * V_D + (du * du + dv * dv) / half_diag2 * V_F + (1.0 - cos).powi(2) * V_O
}

fn random_case(rng: &mut ChaCha8Rng) -> (Trajectory, CameraModel, Vector3<f64>, Rotation3<f64>, Vector3<f64>) {
    let cam_pos = Vector3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), 0.0);
    let tilt = Vector3::new(
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.3..0.3),
    );
    let cam_rot = Rotation3::from_scaled_axis(tilt);
    let cam = CameraModel::new(Pose::new(cam_pos, tilt), 500.0, 450.0, (320.0, 240.0), (640.0, 480.0)).unwrap();
    let n = rng.gen_range(2..8);
    let wps = (0..=n)
        .map(|_| {
            let local = Vector3::new(
                rng.gen_range(-0.06..0.06),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(0.1..0.35),
            );
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            Pose::new(cam_rot * local + cam_pos, axis.normalize() * rng.gen_range(0.2..2.5))
        })
        .collect();
    let o_star = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.2..1.0),
    );
    (Trajectory::new(wps).unwrap(), cam, cam_pos, cam_rot, o_star)
}

#[test]
fn isotropic_propagation_matches_scalar_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let (traj, cam, cam_pos, cam_rot, o_star) = random_case(&mut rng);
        let prior_var = rng.gen_range(1e-4..1e-1);
        let initial_update = rng.gen_bool(0.5);
        let noise = StateDependentNoise::full(NoiseConfig::reference(o_star));
        let prior = Belief::new(Default::default(), Matrix6::identity() * prior_var);
        let trace = propagate(
            &traj,
            &CameraSchedule::constant(cam),
            &noise,
            &prior,
            PropagateOptions { initial_update },
        )
        .unwrap();

        let wps = traj.waypoints();
        let fuse = |s: f64, v: f64| s * v / (s + v);
        let mut s = prior_var;
        if initial_update {
            s = fuse(s, observation_variance(&wps[0], &cam_pos, &cam_rot, &o_star));
        }
        for t in 1..wps.len() {
            let predicted = s + step_variance(&wps[t - 1], &wps[t]);
            s = fuse(predicted, observation_variance(&wps[t], &cam_pos, &cam_rot, &o_star));
            let got = trace.belief_at(t);
            let expected = Matrix6::identity() * s;
            assert!(
                (got.covariance - expected).abs().max() <= 1e-12 * s.max(1e-12) + 1e-15,
                "t={t}: {} vs {s}",
                got.covariance[(0, 0)]
            );
            assert_eq!(got.mean, wps[t].to_vec6());
        }
    }
}

#[test]
fn noiseless_observations_collapse_the_belief() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (traj, cam, ..) = random_case(&mut rng);
    let mut cfg = NoiseConfig::reference(Vector3::z());
    cfg.v_d0 = Matrix6::zeros();
    cfg.v_f0 = Matrix6::zeros();
    cfg.v_o0 = Matrix6::zeros();
    let prior = Belief::new(Default::default(), Matrix6::identity());
    let trace = propagate(
        &traj,
        &CameraSchedule::constant(cam),
        &StateDependentNoise::full(cfg),
        &prior,
        PropagateOptions::default(),
    )
    .unwrap();
    for t in 0..=traj.horizon() {
        assert_eq!(trace.belief_at(t).covariance, Matrix6::zeros());
    }
}
