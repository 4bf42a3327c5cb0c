//! Scenario generation, noisy rollouts and the ablation protocol.
//!
//! Rollouts are closed loop: every command moves the *estimated* state onto
//! the next waypoint, the true state follows with motion noise, and the filter
//! fuses observations of the true state corrupted by observation noise. Noise
//! for the true state is always evaluated at the true state, while the filter
//! evaluates its covariances at its own mean.
//!
//! All randomness comes from ChaCha streams keyed by (master seed, scenario
//! index, trial index), so serial and parallel runs agree bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::belief_engine::{entropy, predict_with, update_with, Belief, BeliefTrace, PropagateOptions};
use crate::geometry::{angle_between, interpolate_orientation, relative_rotation, CameraModel, CameraSchedule, Pose};
use crate::noise_models::{AblationMask, FrozenNoise, NoiseConfig, NoiseModel, StateDependentNoise, ZERO_ORIENTATION};
use crate::optimizer::{optimize, worst_case_scale, OptimizerConfig, Problem, Trajectory};
use crate::{Error, Mat6, Result, Vec3, Vec6};

/// State at which the simulated truth draws its noise covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruthNoise {
    /// Covariances evaluated at the true state; the filter only sees its mean.
    #[default]
    TrueState,
    /// Covariances evaluated where the filter evaluates them, so the filter's
    /// noise model is exact. Diagnostic only.
    Estimate,
}

/// One randomized task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub start: Pose,
    pub goal: Pose,
    pub cameras: CameraSchedule,
    pub noise: NoiseConfig,
    pub prior: Belief,
    pub horizon: usize,
    pub seed: u64,
    pub propagate: PropagateOptions,
    pub truth_noise: TruthNoise,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be >= 1".into()));
        }
        self.noise.validate()?;
        for (i, cam) in self.cameras.entries() {
            for (name, p) in [("start", &self.start), ("goal", &self.goal)] {
                let depth = cam.camera_depth(&p.position);
                if depth <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "{name} is behind camera {i} (depth {depth})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Objective for a given mask under the scenario's own noise.
    pub fn problem(&self, mask: AblationMask) -> Problem {
        Problem {
            cameras: self.cameras.clone(),
            noise: self.noise.clone(),
            mask,
            prior: self.prior,
            propagate: self.propagate,
        }
    }

    /// Belief propagation with the full noise model and ML observations.
    pub fn propagate_ml(&self, traj: &Trajectory) -> Result<BeliefTrace> {
        self.problem(AblationMask::ALL).propagate(traj)
    }
}

/// Straight-line positions, geodesically interpolated orientations.
pub fn make_baseline(scenario: &Scenario) -> Result<Trajectory> {
    let t = scenario.horizon;
    if t == 0 {
        return Err(Error::InvalidInput("horizon must be >= 1".into()));
    }
    let (a, b) = (&scenario.start, &scenario.goal);
    let wps = (0..=t)
        .map(|i| {
            if i == 0 {
                return *a;
            }
            if i == t {
                return *b;
            }
            let s = i as f64 / t as f64;
            Pose::new(
                a.position + (b.position - a.position) * s,
                interpolate_orientation(&a.orientation, &b.orientation, s),
            )
        })
        .collect();
    Trajectory::new(wps)
}

/// Goal orientation expressed in the frame of `camera`, the camera in place
/// when the goal is reached. Falls back to the optical axis when that rotation
/// is the identity, since `o*` must be non-zero.
pub fn default_o_star(goal: &Pose, camera: &CameraModel) -> Vec3 {
    let c = &camera.pose().orientation;
    let o = if *c == Vec3::zeros() {
        goal.orientation
    } else {
        relative_rotation(c, &goal.orientation)
    };
    if o.norm() < ZERO_ORIENTATION {
        Vec3::z()
    } else {
        o
    }
}

/// Sampling ranges for random scenarios. Start and goal are drawn in the
/// frame of the initial camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBounds {
    /// Half-width of the box the camera center is drawn from (m).
    pub camera_position_range: f64,
    /// Bound on each axis-angle component of the camera orientation (rad).
    pub camera_tilt_range: f64,
    /// Depth of the workspace cube center in front of the camera (m).
    pub workspace_depth: f64,
    /// Half edge of the workspace cube (m).
    pub workspace_half_extent: f64,
    /// Accepted camera-frame depths (m).
    pub depth_range: (f64, f64),
    /// Range of tool rotation angles (rad); axes are uniform on the sphere.
    pub orientation_angle_range: (f64, f64),
    pub fx: f64,
    pub fy: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub horizon: usize,
    /// Number of mid-trajectory camera moves.
    pub camera_moves: usize,
    /// Size of each camera move: translation (m) and rotation (rad) bound.
    pub camera_move_size: (f64, f64),
    pub noise: NoiseConfig,
    /// Preferred detection orientation; `None` uses the goal orientation.
    pub o_star: Option<Vec3>,
    pub prior_variance: f64,
    pub propagate: PropagateOptions,
    pub truth_noise: TruthNoise,
}

impl Default for ScenarioBounds {
    fn default() -> Self {
        Self {
            camera_position_range: 0.02,
            camera_tilt_range: 0.15,
            workspace_depth: 0.2,
            workspace_half_extent: 0.15,
            depth_range: (0.05, 0.40),
            orientation_angle_range: (0.3, 2.5),
            fx: 500.0,
            fy: 500.0,
            image_width: 640.0,
            image_height: 480.0,
            horizon: 10,
            camera_moves: 0,
            camera_move_size: (0.02, 0.15),
            noise: NoiseConfig::reference(Vec3::z()),
            o_star: None,
            prior_variance: 1e-2,
            propagate: PropagateOptions::default(),
            truth_noise: TruthNoise::TrueState,
        }
    }
}

/// Attempts per rejection-sampled pose.
pub const REJECTION_ATTEMPTS: usize = 1000;

fn uniform_box(rng: &mut impl Rng, half: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-half..=half),
        rng.gen_range(-half..=half),
        rng.gen_range(-half..=half),
    )
}

fn random_orientation(rng: &mut impl Rng, range: (f64, f64)) -> Vec3 {
    let axis = loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            break v / n;
        }
    };
    axis * rng.gen_range(range.0..=range.1)
}

fn in_view(cam: &CameraModel, p: &Vec3, depth_range: (f64, f64)) -> bool {
    let d = cam.camera_depth(p);
    d >= depth_range.0 && d <= depth_range.1 && cam.sees(p)
}

fn sample_position(rng: &mut impl Rng, cams: &[CameraModel], bounds: &ScenarioBounds) -> Result<Vec3> {
    let anchor = &cams[0];
    for _ in 0..REJECTION_ATTEMPTS {
        let local = uniform_box(rng, bounds.workspace_half_extent) + Vec3::new(0.0, 0.0, bounds.workspace_depth);
        let p = anchor.to_world_frame(&local);
        if cams.iter().all(|c| in_view(c, &p, bounds.depth_range)) {
            return Ok(p);
        }
    }
    Err(Error::RejectionLimit {
        attempts: REJECTION_ATTEMPTS,
    })
}

/// Draws a scenario from `rng`; `seed` is recorded for provenance.
pub fn sample_scenario_with(rng: &mut impl Rng, bounds: &ScenarioBounds, seed: u64) -> Result<Scenario> {
    let cam_pose = Pose::new(
        uniform_box(rng, bounds.camera_position_range),
        uniform_box(rng, bounds.camera_tilt_range),
    );
    let base = CameraModel::new(
        cam_pose,
        bounds.fx,
        bounds.fy,
        (bounds.image_width * 0.5, bounds.image_height * 0.5),
        (bounds.image_width, bounds.image_height),
    )?;
    let mut cams = vec![base.clone()];
    let mut entries = vec![(0, base)];
    if bounds.camera_moves > 0 && bounds.horizon > 1 {
        for m in 1..=bounds.camera_moves {
            let step = (m * bounds.horizon / (bounds.camera_moves + 1)).max(1);
            if entries.last().is_some_and(|(i, _)| *i >= step) {
                continue;
            }
            let prev = &cams[cams.len() - 1];
            let jump = Pose::new(
                uniform_box(rng, bounds.camera_move_size.0),
                uniform_box(rng, bounds.camera_move_size.1),
            );
            let moved = prev.with_pose(prev.pose().compose(&jump));
            cams.push(moved.clone());
            entries.push((step, moved));
        }
    }
    let start_p = sample_position(rng, &cams, bounds)?;
    let goal_p = sample_position(rng, &cams, bounds)?;
    let start = Pose::new(start_p, random_orientation(rng, bounds.orientation_angle_range));
    let goal = Pose::new(goal_p, random_orientation(rng, bounds.orientation_angle_range));

    let cameras = CameraSchedule::new(entries)?;
    let mut noise = bounds.noise.clone();
    noise.o_star = bounds
        .o_star
        .unwrap_or_else(|| default_o_star(&goal, cameras.camera_at(bounds.horizon)));
    let scenario = Scenario {
        start,
        goal,
        cameras,
        noise,
        prior: Belief::new(Vec6::zeros(), Mat6::identity() * bounds.prior_variance),
        horizon: bounds.horizon,
        seed,
        propagate: bounds.propagate,
        truth_noise: bounds.truth_noise,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn sample_scenario(seed: u64, bounds: &ScenarioBounds) -> Result<Scenario> {
    sample_scenario_with(&mut ChaCha8Rng::seed_from_u64(seed), bounds, seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the independent stream for `(master, scenario, trial)`.
pub fn stream_seed(master: u64, scenario: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ scenario) ^ trial)
}

/// Stream used to sample scenario `index`.
pub fn scenario_seed(master: u64, index: usize) -> u64 {
    stream_seed(master, index as u64, u64::MAX)
}

pub fn trial_rng(master: u64, scenario: usize, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, scenario as u64, trial as u64))
}

/// Draws from `N(0, cov)` through the symmetric eigendecomposition, which
/// tolerates singular covariances.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, cov: &Mat6) -> Vec6 {
    let eig = ((cov + cov.transpose()) * 0.5).symmetric_eigen();
    let n = Vec6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let scaled = Vec6::from_fn(|i, _| eig.eigenvalues[i].max(0.0).sqrt() * n[i]);
    eig.eigenvectors * scaled
}

/// End state of one simulated execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    pub true_final: Vec6,
    pub belief: Belief,
}

/// Closed-loop execution of `traj` with separate truth and filter noise models.
pub fn simulate(
    traj: &Trajectory,
    cams: &CameraSchedule,
    truth: &impl NoiseModel,
    filter: &impl NoiseModel,
    prior: &Belief,
    options: PropagateOptions,
    truth_at: TruthNoise,
    rng: &mut impl Rng,
) -> Result<RolloutOutcome> {
    let wps = traj.waypoints();
    let mut belief = Belief::at_pose(&wps[0], prior.covariance);
    let mut x = belief.mean + sample_gaussian(rng, &belief.covariance);

    let observe = |belief: &Belief, x: &Vec6, t: usize, rng: &mut dyn rand::RngCore| -> Result<Belief> {
        let cam = cams.camera_at(t);
        let at = match truth_at {
            TruthNoise::TrueState => Pose::from_vec6(x),
            TruthNoise::Estimate => belief.mean_pose(),
        };
        let v_true = truth.obs_cov(&at, cam)?;
        let z = x + sample_gaussian(rng, &v_true);
        let v_filter = filter.obs_cov(&belief.mean_pose(), cam)?;
        Ok(update_with(belief, &v_filter, Some(&z))?.0)
    };

    if options.initial_update {
        belief = observe(&belief, &x, 0, rng).map_err(|e| e.at_step(0))?;
    }
    for t in 0..traj.horizon() {
        let target = wps[t + 1].to_vec6();
        let command = target - belief.mean;
        let (from, to) = match truth_at {
            TruthNoise::TrueState => (Pose::from_vec6(&x), Pose::from_vec6(&(x + command))),
            TruthNoise::Estimate => (belief.mean_pose(), wps[t + 1]),
        };
        x += command + sample_gaussian(rng, &truth.motion_cov(&from, &to));
        let w_filter = filter.motion_cov(&belief.mean_pose(), &wps[t + 1]);
        belief = predict_with(&belief, &target, &w_filter);
        belief = observe(&belief, &x, t + 1, rng).map_err(|e| e.at_step(t + 1))?;
    }
    Ok(RolloutOutcome { true_final: x, belief })
}

/// Per-trial metrics of a noisy rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    /// Euclidean distance of the true final position from the goal (m).
    pub position_error: f64,
    /// Geodesic angle of the true final orientation from the goal (rad).
    pub orientation_error: f64,
    /// Trace of the tracked final covariance.
    pub trace: f64,
    /// Entropy of the tracked final belief (nats).
    pub entropy: f64,
}

/// One noisy rollout under the scenario's full noise model.
pub fn rollout_noisy(traj: &Trajectory, scenario: &Scenario, rng: &mut impl Rng) -> Result<TrialRow> {
    let noise = StateDependentNoise::full(scenario.noise.clone());
    let out = simulate(
        traj,
        &scenario.cameras,
        &noise,
        &noise,
        &scenario.prior,
        scenario.propagate,
        scenario.truth_noise,
        rng,
    )?;
    let fin = Pose::from_vec6(&out.true_final);
    Ok(TrialRow {
        trial: 0,
        position_error: (fin.position - scenario.goal.position).norm(),
        orientation_error: angle_between(&fin.orientation, &scenario.goal.orientation),
        trace: out.belief.trace(),
        entropy: entropy(&out.belief)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub cause: String,
}

/// Summary statistics over successful trials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialAggregates {
    pub count: usize,
    pub position_error_mean: f64,
    pub position_error_std: f64,
    pub orientation_error_mean: f64,
    pub orientation_error_std: f64,
    pub trace_mean: f64,
    pub entropy_mean: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl TrialAggregates {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        let (pm, ps) = mean_std(rows.iter().map(|r| r.position_error));
        let (om, os) = mean_std(rows.iter().map(|r| r.orientation_error));
        let (tm, _) = mean_std(rows.iter().map(|r| r.trace));
        let (em, _) = mean_std(rows.iter().map(|r| r.entropy));
        Self {
            count: rows.len(),
            position_error_mean: pm,
            position_error_std: ps,
            orientation_error_mean: om,
            orientation_error_std: os,
            trace_mean: tm,
            entropy_mean: em,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub rows: Vec<TrialRow>,
    pub failures: Vec<TrialFailure>,
    pub aggregates: TrialAggregates,
    /// Final trace and entropy under maximum-likelihood propagation.
    pub ml_trace: f64,
    pub ml_entropy: f64,
}

/// `n_rollouts` noisy rollouts of `traj`, trial `k` drawing from stream
/// `(master, scenario_index, k)`.
pub fn rollout_report(
    traj: &Trajectory,
    scenario: &Scenario,
    n_rollouts: usize,
    master: u64,
    scenario_index: usize,
) -> Result<RolloutReport> {
    let ml = scenario.propagate_ml(traj)?;
    let ml_belief = ml.final_belief();
    let mut rows = Vec::with_capacity(n_rollouts);
    let mut failures = Vec::new();
    for trial in 0..n_rollouts {
        let mut rng = trial_rng(master, scenario_index, trial);
        match rollout_noisy(traj, scenario, &mut rng) {
            Ok(row) => rows.push(TrialRow { trial, ..row }),
            Err(e) => failures.push(TrialFailure {
                trial,
                cause: e.at_trial(trial).to_string(),
            }),
        }
    }
    Ok(RolloutReport {
        aggregates: TrialAggregates::from_rows(&rows),
        rows,
        failures,
        ml_trace: ml_belief.trace(),
        ml_entropy: entropy(ml_belief)?,
    })
}

/// Empirical covariance of the final estimation error over many rollouts,
/// next to the covariance predicted by ML propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyCheck {
    pub empirical: Mat6,
    pub predicted: Mat6,
    pub samples: usize,
}

impl ConsistencyCheck {
    pub fn relative_trace_error(&self) -> f64 {
        (self.empirical.trace() - self.predicted.trace()).abs() / self.predicted.trace()
    }
}

/// Monte Carlo check of the filter: with constant covariances the estimation
/// error `x_T - μ_T|T` is distributed as `N(0, Σ_T|T)`.
pub fn monte_carlo_consistency(
    traj: &Trajectory,
    cams: &CameraSchedule,
    noise: &FrozenNoise,
    prior: &Belief,
    options: PropagateOptions,
    samples: usize,
    seed: u64,
) -> Result<ConsistencyCheck> {
    if samples < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    let predicted = crate::belief_engine::propagate(traj, cams, noise, prior, options)?
        .final_belief()
        .covariance;
    let errors: Vec<Vec6> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, 0, k);
            simulate(
                traj,
                cams,
                noise,
                noise,
                prior,
                options,
                TruthNoise::TrueState,
                &mut rng,
            )
            .map(|o| o.true_final - o.belief.mean)
        })
        .collect::<Result<_>>()?;
    let mean = errors.iter().sum::<Vec6>() / samples as f64;
    let empirical = errors.iter().map(|e| (e - mean) * (e - mean).transpose()).sum::<Mat6>() / (samples - 1) as f64;
    Ok(ConsistencyCheck {
        empirical,
        predicted,
        samples,
    })
}

/// Baseline-relative value: `y / b` for positive metrics and
/// `1 - (y - b) / b` for negative ones (entropies). Lower is better.
pub fn relative_scale(y: f64, b: f64) -> Result<f64> {
    if b == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    if b > 0.0 && y >= 0.0 {
        Ok(y / b)
    } else if b < 0.0 && y < 0.0 {
        Ok(1.0 - (y - b) / b)
    } else {
        Err(Error::SignMismatch { value: y, baseline: b })
    }
}

/// Methods compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    All,
    NoPoseLoss,
    NoDepth,
    NoFov,
    NoOrientation,
}

impl Variant {
    pub const STANDARD: [Variant; 6] = [
        Variant::Baseline,
        Variant::All,
        Variant::NoPoseLoss,
        Variant::NoDepth,
        Variant::NoFov,
        Variant::NoOrientation,
    ];

    /// Identifier used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::All => "all",
            Variant::NoPoseLoss => "no-pose-loss",
            Variant::NoDepth => "no-depth",
            Variant::NoFov => "no-fov",
            Variant::NoOrientation => "no-orientation",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::All => "SURESTEP (all)",
            Variant::NoPoseLoss => "SURESTEP (no pose loss)",
            Variant::NoDepth => "No depth noise",
            Variant::NoFov => "No FOV noise",
            Variant::NoOrientation => "No orientation noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::STANDARD.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown variant '{s}', expected one of: {}",
                Self::STANDARD.map(|v| v.name()).join(", ")
            ))
        })
    }

    /// Optimization-time mask.
    pub fn mask(self) -> AblationMask {
        let all = AblationMask::ALL;
        match self {
            Variant::Baseline | Variant::All => all,
            Variant::NoPoseLoss => AblationMask {
                use_pose_loss: false,
                ..all
            },
            Variant::NoDepth => AblationMask {
                use_depth: false,
                ..all
            },
            Variant::NoFov => AblationMask { use_fov: false, ..all },
            Variant::NoOrientation => AblationMask {
                use_orientation: false,
                ..all
            },
        }
    }

    pub fn optimizes(self) -> bool {
        self != Variant::Baseline
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSuite {
    variants: Vec<Variant>,
}

impl AblationSuite {
    pub fn standard() -> Self {
        Self {
            variants: Variant::STANDARD.to_vec(),
        }
    }

    /// The baseline is always evaluated, since every metric is relative to it.
    pub fn new(variants: impl IntoIterator<Item = Variant>) -> Self {
        let mut v: Vec<Variant> = std::iter::once(Variant::Baseline).chain(variants).collect();
        v.sort();
        v.dedup();
        Self { variants: v }
    }

    pub fn parse_list(list: &str) -> Result<Self> {
        let parsed = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Variant::parse)
            .collect::<Result<Vec<_>>>()?;
        if parsed.is_empty() {
            return Err(Error::Config("variant list is empty".into()));
        }
        Ok(Self::new(parsed))
    }

    pub fn variants(&self) -> &[Variant] {
        &self.variants
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub n_scenarios: usize,
    pub n_rollouts: usize,
    pub seed: u64,
    pub bounds: ScenarioBounds,
    pub optimizer: OptimizerConfig,
    /// Inflation of every base covariance during optimization only.
    pub worst_case_factor: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            n_scenarios: 20,
            n_rollouts: 20,
            seed: 0,
            bounds: ScenarioBounds::default(),
            optimizer: OptimizerConfig::default(),
            worst_case_factor: 1.0,
        }
    }
}

/// Optimizer outcome recorded per variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizationSummary {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub trajectory: Trajectory,
    pub report: RolloutReport,
    pub optimization: Option<OptimizationSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub index: usize,
    pub scenario: Scenario,
    pub variants: Vec<VariantResult>,
}

impl ScenarioResult {
    pub fn variant(&self, v: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFailure {
    pub index: usize,
    pub cause: String,
}

/// Ablation metrics of one variant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub position_mean: f64,
    pub position_std: f64,
    pub orientation_mean: f64,
    pub orientation_std: f64,
    pub trace_noisy: f64,
    pub trace_ml: f64,
    pub entropy_noisy: f64,
    pub entropy_ml: f64,
}

impl Metrics {
    pub const COLUMNS: [&'static str; 8] = [
        "position_mean",
        "position_std",
        "orientation_mean",
        "orientation_std",
        "trace_noisy",
        "trace_ml",
        "entropy_noisy",
        "entropy_ml",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.position_mean,
            self.position_std,
            self.orientation_mean,
            self.orientation_std,
            self.trace_noisy,
            self.trace_ml,
            self.entropy_noisy,
            self.entropy_ml,
        ]
    }

    fn from_values(v: [f64; 8]) -> Self {
        Self {
            position_mean: v[0],
            position_std: v[1],
            orientation_mean: v[2],
            orientation_std: v[3],
            trace_noisy: v[4],
            trace_ml: v[5],
            entropy_noisy: v[6],
            entropy_ml: v[7],
        }
    }

    /// Pooled over every successful trial of every scenario.
    pub fn pooled(results: &[&VariantResult]) -> Self {
        let rows: Vec<TrialRow> = results.iter().flat_map(|r| r.report.rows.iter().copied()).collect();
        let agg = TrialAggregates::from_rows(&rows);
        let n = results.len() as f64;
        Self {
            position_mean: agg.position_error_mean,
            position_std: agg.position_error_std,
            orientation_mean: agg.orientation_error_mean,
            orientation_std: agg.orientation_error_std,
            trace_noisy: agg.trace_mean,
            trace_ml: results.iter().map(|r| r.report.ml_trace).sum::<f64>() / n,
            entropy_noisy: agg.entropy_mean,
            entropy_ml: results.iter().map(|r| r.report.ml_entropy).sum::<f64>() / n,
        }
    }

    /// Identical values are 1.0 even when both are zero.
    pub fn relative_to(&self, baseline: &Metrics) -> Result<Self> {
        let (y, b) = (self.values(), baseline.values());
        let mut out = [0.0; 8];
        for i in 0..8 {
            out[i] = if y[i] == b[i] { 1.0 } else { relative_scale(y[i], b[i])? };
        }
        Ok(Self::from_values(out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub raw: Metrics,
    pub relative: Metrics,
    pub trial_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub config: AblationConfig,
    pub rows: Vec<AblationRow>,
    pub scenarios: Vec<ScenarioResult>,
    pub failures: Vec<ScenarioFailure>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn failure_fraction(&self) -> f64 {
        self.failures.len() as f64 / self.config.n_scenarios.max(1) as f64
    }
}

/// Optimizes and evaluates every variant of `suite` on one scenario. Trials
/// draw from the streams of scenario `index`.
pub fn evaluate_scenario(
    index: usize,
    scenario: Scenario,
    config: &AblationConfig,
    suite: &AblationSuite,
) -> Result<ScenarioResult> {
    let baseline = make_baseline(&scenario)?;
    let opt_noise = worst_case_scale(&scenario.noise, config.worst_case_factor)?;
    let mut variants = Vec::with_capacity(suite.variants().len());
    for &variant in suite.variants() {
        let (trajectory, optimization) = if variant.optimizes() {
            let mut problem = scenario.problem(variant.mask());
            problem.noise = opt_noise.clone();
            let rep = optimize(&baseline, &problem, &config.optimizer)?;
            let summary = OptimizationSummary {
                iterations: rep.history.len() - 1,
                initial_loss: rep.initial_loss().total,
                final_loss: rep.final_loss().total,
                line_search_failed: rep.line_search_failed,
            };
            (rep.trajectory, Some(summary))
        } else {
            (baseline.clone(), None)
        };
        // evaluation: full noise model, same random streams for every variant
        let report = rollout_report(&trajectory, &scenario, config.n_rollouts, config.seed, index)?;
        if report.rows.is_empty() {
            return Err(Error::InvalidInput(format!(
                "every rollout of variant {} failed: {}",
                variant.name(),
                report.failures.first().map_or("", |f| f.cause.as_str())
            )));
        }
        variants.push(VariantResult {
            variant,
            trajectory,
            report,
            optimization,
        });
    }
    Ok(ScenarioResult {
        index,
        scenario,
        variants,
    })
}

/// Pools per-scenario results into the baseline-relative table.
pub fn tabulate(
    config: &AblationConfig,
    suite: &AblationSuite,
    scenarios: Vec<ScenarioResult>,
    failures: Vec<ScenarioFailure>,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    if !scenarios.is_empty() {
        let collect = |v: Variant| -> Vec<&VariantResult> { scenarios.iter().filter_map(|s| s.variant(v)).collect() };
        let base = Metrics::pooled(&collect(Variant::Baseline));
        for &variant in suite.variants() {
            let results = collect(variant);
            let raw = Metrics::pooled(&results);
            rows.push(AblationRow {
                variant,
                raw,
                relative: raw.relative_to(&base)?,
                trial_failures: results.iter().map(|r| r.report.failures.len()).sum(),
            });
        }
    }
    Ok(AblationTable {
        config: config.clone(),
        rows,
        scenarios,
        failures,
    })
}

/// Runs the ablation protocol. Scenarios are processed in parallel on the
/// current rayon pool; results are merged in index order.
pub fn run_ablation(config: &AblationConfig, suite: &AblationSuite) -> Result<AblationTable> {
    if config.n_scenarios == 0 || config.n_rollouts == 0 {
        return Err(Error::InvalidInput("n_scenarios and n_rollouts must be >= 1".into()));
    }
    config.optimizer.validate()?;
    let outcomes: Vec<Result<ScenarioResult>> = (0..config.n_scenarios)
        .into_par_iter()
        .map(|i| {
            let scenario = sample_scenario(scenario_seed(config.seed, i), &config.bounds)?;
            evaluate_scenario(i, scenario, config, suite)
        })
        .collect();

    let mut scenarios = Vec::new();
    let mut failures = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => scenarios.push(r),
            Err(e) => failures.push(ScenarioFailure {
                index,
                cause: e.to_string(),
            }),
        }
    }
    tabulate(config, suite, scenarios, failures)
}

/// Re-plans the remainder of `traj` from waypoint `step` on, starting from
/// the tracked belief at that step. The prefix is kept as is.
pub fn reoptimize_from(
    traj: &Trajectory,
    scenario: &Scenario,
    step: usize,
    tracked: &Belief,
    mask: AblationMask,
    opt: &OptimizerConfig,
) -> Result<Trajectory> {
    if step >= traj.horizon() {
        return Err(Error::InvalidInput(format!(
            "step {step} is not before the end of horizon {}",
            traj.horizon()
        )));
    }
    let mut suffix = traj.suffix(step)?.waypoints().to_vec();
    suffix[0] = tracked.mean_pose();
    let suffix = Trajectory::new(suffix)?;
    let problem = Problem {
        cameras: scenario.cameras.suffix(step),
        noise: scenario.noise.clone(),
        mask,
        prior: *tracked,
        // the tracked belief already contains the observation at `step`
        propagate: PropagateOptions { initial_update: false },
    };
    let rep = optimize(&suffix, &problem, opt)?;
    let mut wps = traj.waypoints()[..step].to_vec();
    wps.extend_from_slice(rep.trajectory.waypoints());
    Trajectory::new(wps)
}

/// Re-plans after a camera change at `step`, using the ML-tracked belief.
pub fn reoptimize_on_camera_change(
    traj: &Trajectory,
    scenario: &Scenario,
    step: usize,
    mask: AblationMask,
    opt: &OptimizerConfig,
) -> Result<Trajectory> {
    let trace = scenario.propagate_ml(traj)?;
    let tracked = *trace.belief_at(step);
    reoptimize_from(traj, scenario, step, &tracked, mask, opt)
}
