//! File formats: TOML scenario and ablation inputs, JSON and CSV reports.
//!
//! Inputs are parsed strictly; unknown keys are errors. Every report carries
//! the fully resolved input and the seed. CSV files put that metadata on
//! leading `#` lines, followed by an RFC 4180 table whose floats are written
//! with 17 significant digits. Nothing time-dependent is ever written, so a
//! rerun with the same inputs is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::belief_engine::{entropy, Belief, BeliefTrace, PropagateOptions};
use crate::geometry::{CameraModel, CameraSchedule, Pose};
use crate::noise_models::{AblationMask, FovNormalization, NoiseConfig};
use crate::optimizer::{GradientMode, IterationRecord, OptimizerConfig, Trajectory};
use crate::sim_harness::{
    default_o_star, AblationConfig, AblationSuite, AblationTable, Metrics, Scenario, ScenarioBounds, TruthNoise,
    Variant,
};
use crate::{Error, Mat6, Result, Vec3, Vec6};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
}

impl PoseSpec {
    pub fn to_pose(&self) -> Pose {
        Pose::new(Vec3::from(self.position), Vec3::from(self.orientation))
    }

    pub fn from_pose(p: &Pose) -> Self {
        Self {
            position: p.position.into(),
            orientation: p.orientation.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    /// First waypoint index at which this camera is in place.
    #[serde(default)]
    pub step: usize,
    pub position: [f64; 3],
    #[serde(default)]
    pub orientation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    /// Principal point; defaults to the image center.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub width: f64,
    pub height: f64,
}

impl CameraSpec {
    pub fn to_camera(&self) -> Result<CameraModel> {
        let pose = Pose::new(Vec3::from(self.position), Vec3::from(self.orientation));
        let cx = self.cx.unwrap_or(self.width * 0.5);
        let cy = self.cy.unwrap_or(self.height * 0.5);
        CameraModel::new(pose, self.fx, self.fy, (cx, cy), (self.width, self.height))
    }

    pub fn from_camera(step: usize, cam: &CameraModel) -> Self {
        Self {
            step,
            position: cam.pose().position.into(),
            orientation: cam.pose().orientation.into(),
            fx: cam.fx,
            fy: cam.fy,
            cx: Some(cam.cx),
            cy: Some(cam.cy),
            width: cam.width,
            height: cam.height,
        }
    }
}

/// A covariance given either as a multiple of the identity or in full.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scalar(f64),
    Matrix([[f64; 6]; 6]),
}

impl CovSpec {
    pub fn to_matrix(&self) -> Mat6 {
        match self {
            CovSpec::Scalar(s) => Mat6::identity() * *s,
            CovSpec::Matrix(rows) => Mat6::from_fn(|i, j| rows[i][j]),
        }
    }

    /// Scalar form whenever the matrix is a multiple of the identity.
    pub fn from_matrix(m: &Mat6) -> Self {
        let s = m[(0, 0)];
        if *m == Mat6::identity() * s {
            CovSpec::Scalar(s)
        } else {
            CovSpec::Matrix(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FovSpec {
    #[default]
    HalfDiagonal,
    Pixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub w_p0: CovSpec,
    pub w_o0: CovSpec,
    pub v_d0: CovSpec,
    pub v_f0: CovSpec,
    pub v_o0: CovSpec,
    pub d_star: f64,
    /// Preferred detection orientation; defaults to the goal orientation.
    pub o_star: Option<[f64; 3]>,
    pub fov_normalization: FovSpec,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::from_config(&NoiseConfig::reference(Vec3::zeros()), None)
    }
}

impl NoiseSpec {
    pub fn to_config(&self, default_o_star: Vec3) -> Result<NoiseConfig> {
        let cfg = NoiseConfig {
            w_p0: self.w_p0.to_matrix(),
            w_o0: self.w_o0.to_matrix(),
            v_d0: self.v_d0.to_matrix(),
            v_f0: self.v_f0.to_matrix(),
            v_o0: self.v_o0.to_matrix(),
            d_star: self.d_star,
            o_star: self.o_star.map(Vec3::from).unwrap_or(default_o_star),
            fov_normalization: match self.fov_normalization {
                FovSpec::HalfDiagonal => FovNormalization::HalfDiagonal,
                FovSpec::Pixels => FovNormalization::Pixels,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &NoiseConfig, o_star: Option<Vec3>) -> Self {
        Self {
            w_p0: CovSpec::from_matrix(&cfg.w_p0),
            w_o0: CovSpec::from_matrix(&cfg.w_o0),
            v_d0: CovSpec::from_matrix(&cfg.v_d0),
            v_f0: CovSpec::from_matrix(&cfg.v_f0),
            v_o0: CovSpec::from_matrix(&cfg.v_o0),
            d_star: cfg.d_star,
            o_star: o_star.map(Into::into),
            fov_normalization: match cfg.fov_normalization {
                FovNormalization::HalfDiagonal => FovSpec::HalfDiagonal,
                FovNormalization::Pixels => FovSpec::Pixels,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    pub use_depth: bool,
    pub use_fov: bool,
    pub use_orientation: bool,
    pub use_pose_loss: bool,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self::from_mask(&AblationMask::ALL)
    }
}

impl MaskSpec {
    pub fn to_mask(&self) -> AblationMask {
        AblationMask {
            use_depth: self.use_depth,
            use_fov: self.use_fov,
            use_orientation: self.use_orientation,
            use_pose_loss: self.use_pose_loss,
        }
    }

    pub fn from_mask(m: &AblationMask) -> Self {
        Self {
            use_depth: m.use_depth,
            use_fov: m.use_fov,
            use_orientation: m.use_orientation,
            use_pose_loss: m.use_pose_loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientSpec {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub max_iterations: usize,
    pub history_size: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search_evals: usize,
    pub gradient: GradientSpec,
    pub fd_step: f64,
    pub convergence_tol: f64,
    pub initial_step: f64,
    pub worst_case_factor: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::from_config(&OptimizerConfig::default(), 1.0)
    }
}

impl OptimizerSpec {
    pub fn to_config(&self) -> Result<OptimizerConfig> {
        let cfg = OptimizerConfig {
            max_iterations: self.max_iterations,
            history_size: self.history_size,
            wolfe_c1: self.wolfe_c1,
            wolfe_c2: self.wolfe_c2,
            max_line_search_evals: self.max_line_search_evals,
            gradient_mode: match self.gradient {
                GradientSpec::Analytic => GradientMode::Analytic,
                GradientSpec::FiniteDifference => GradientMode::FiniteDifference,
            },
            fd_step: self.fd_step,
            convergence_tol: self.convergence_tol,
            initial_step: self.initial_step,
        };
        cfg.validate()?;
        if !(self.worst_case_factor >= 1.0) {
            return Err(Error::Config(format!(
                "worst_case_factor must be >= 1, got {}",
                self.worst_case_factor
            )));
        }
        Ok(cfg)
    }

    pub fn from_config(cfg: &OptimizerConfig, worst_case_factor: f64) -> Self {
        Self {
            max_iterations: cfg.max_iterations,
            history_size: cfg.history_size,
            wolfe_c1: cfg.wolfe_c1,
            wolfe_c2: cfg.wolfe_c2,
            max_line_search_evals: cfg.max_line_search_evals,
            gradient: match cfg.gradient_mode {
                GradientMode::Analytic => GradientSpec::Analytic,
                GradientMode::FiniteDifference => GradientSpec::FiniteDifference,
            },
            fd_step: cfg.fd_step,
            convergence_tol: cfg.convergence_tol,
            initial_step: cfg.initial_step,
            worst_case_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TruthNoiseSpec {
    #[default]
    TrueState,
    Estimate,
}

impl TruthNoiseSpec {
    fn to_mode(self) -> TruthNoise {
        match self {
            TruthNoiseSpec::TrueState => TruthNoise::TrueState,
            TruthNoiseSpec::Estimate => TruthNoise::Estimate,
        }
    }

    fn from_mode(m: TruthNoise) -> Self {
        match m {
            TruthNoise::TrueState => TruthNoiseSpec::TrueState,
            TruthNoise::Estimate => TruthNoiseSpec::Estimate,
        }
    }
}

fn default_horizon() -> usize {
    10
}

fn default_prior() -> CovSpec {
    CovSpec::Scalar(1e-2)
}

fn default_true() -> bool {
    true
}

/// A single task: endpoints, cameras, noise and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub start: PoseSpec,
    pub goal: PoseSpec,
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_prior")]
    pub prior: CovSpec,
    #[serde(default = "default_true")]
    pub initial_update: bool,
    #[serde(default)]
    pub truth_noise: TruthNoiseSpec,
    #[serde(default)]
    pub mask: MaskSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

/// Everything a command needs from a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub mask: AblationMask,
    pub optimizer: OptimizerConfig,
    pub worst_case_factor: f64,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read scenario file '{}': {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fails for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String> {
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self) -> Result<LoadedScenario> {
        let goal = self.goal.to_pose();
        let entries = self
            .cameras
            .iter()
            .map(|c| Ok((c.step, c.to_camera()?)))
            .collect::<Result<Vec<_>>>()?;
        let cameras = CameraSchedule::new(entries)?;
        if let Some((step, _)) = cameras.entries().iter().find(|(s, _)| *s > self.horizon) {
            return Err(Error::Config(format!(
                "camera step {step} is beyond horizon {}",
                self.horizon
            )));
        }
        let noise = self
            .noise
            .to_config(default_o_star(&goal, cameras.camera_at(self.horizon)))?;
        let scenario = Scenario {
            start: self.start.to_pose(),
            goal,
            cameras,
            noise,
            prior: Belief::new(Vec6::zeros(), self.prior.to_matrix()),
            horizon: self.horizon,
            seed: self.seed,
            propagate: PropagateOptions {
                initial_update: self.initial_update,
            },
            truth_noise: self.truth_noise.to_mode(),
        };
        scenario.validate()?;
        Ok(LoadedScenario {
            scenario,
            mask: self.mask.to_mask(),
            optimizer: self.optimizer.to_config()?,
            worst_case_factor: self.optimizer.worst_case_factor,
        })
    }

    /// File describing `scenario` with every default spelled out.
    pub fn from_scenario(
        scenario: &Scenario,
        mask: &AblationMask,
        optimizer: &OptimizerConfig,
        worst_case_factor: f64,
    ) -> Self {
        Self {
            seed: scenario.seed,
            horizon: scenario.horizon,
            start: PoseSpec::from_pose(&scenario.start),
            goal: PoseSpec::from_pose(&scenario.goal),
            cameras: scenario
                .cameras
                .entries()
                .iter()
                .map(|(s, c)| CameraSpec::from_camera(*s, c))
                .collect(),
            noise: NoiseSpec::from_config(&scenario.noise, Some(scenario.noise.o_star)),
            prior: CovSpec::from_matrix(&scenario.prior.covariance),
            initial_update: scenario.propagate.initial_update,
            truth_noise: TruthNoiseSpec::from_mode(scenario.truth_noise),
            mask: MaskSpec::from_mask(mask),
            optimizer: OptimizerSpec::from_config(optimizer, worst_case_factor),
        }
    }
}

/// Ranges of the random scenario distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSpec {
    pub camera_position_range: f64,
    pub camera_tilt_range: f64,
    pub workspace_depth: f64,
    pub workspace_half_extent: f64,
    pub depth_range: [f64; 2],
    pub orientation_angle_range: [f64; 2],
    pub fx: f64,
    pub fy: f64,
    pub width: f64,
    pub height: f64,
    pub horizon: usize,
    pub camera_moves: usize,
    pub camera_move_size: [f64; 2],
    pub prior_variance: f64,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        let b = ScenarioBounds::default();
        Self {
            camera_position_range: b.camera_position_range,
            camera_tilt_range: b.camera_tilt_range,
            workspace_depth: b.workspace_depth,
            workspace_half_extent: b.workspace_half_extent,
            depth_range: [b.depth_range.0, b.depth_range.1],
            orientation_angle_range: [b.orientation_angle_range.0, b.orientation_angle_range.1],
            fx: b.fx,
            fy: b.fy,
            width: b.image_width,
            height: b.image_height,
            horizon: b.horizon,
            camera_moves: b.camera_moves,
            camera_move_size: [b.camera_move_size.0, b.camera_move_size.1],
            prior_variance: b.prior_variance,
        }
    }
}

fn standard_variant_names() -> Vec<String> {
    Variant::STANDARD.iter().map(|v| v.name().to_string()).collect()
}

/// Settings of an ablation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFile {
    pub seed: u64,
    pub scenarios: usize,
    pub rollouts: usize,
    pub variants: Vec<String>,
    pub initial_update: bool,
    pub truth_noise: TruthNoiseSpec,
    pub bounds: BoundsSpec,
    pub noise: NoiseSpec,
    pub optimizer: OptimizerSpec,
}

impl Default for AblationFile {
    fn default() -> Self {
        let c = AblationConfig::default();
        Self {
            seed: c.seed,
            scenarios: c.n_scenarios,
            rollouts: c.n_rollouts,
            variants: standard_variant_names(),
            initial_update: true,
            truth_noise: TruthNoiseSpec::TrueState,
            bounds: BoundsSpec::default(),
            noise: NoiseSpec::default(),
            optimizer: OptimizerSpec::default(),
        }
    }
}

impl AblationFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config file '{}': {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self) -> Result<(AblationConfig, AblationSuite)> {
        let suite = AblationSuite::parse_list(&self.variants.join(","))?;
        let b = &self.bounds;
        let bounds = ScenarioBounds {
            camera_position_range: b.camera_position_range,
            camera_tilt_range: b.camera_tilt_range,
            workspace_depth: b.workspace_depth,
            workspace_half_extent: b.workspace_half_extent,
            depth_range: (b.depth_range[0], b.depth_range[1]),
            orientation_angle_range: (b.orientation_angle_range[0], b.orientation_angle_range[1]),
            fx: b.fx,
            fy: b.fy,
            image_width: b.width,
            image_height: b.height,
            horizon: b.horizon,
            camera_moves: b.camera_moves,
            camera_move_size: (b.camera_move_size[0], b.camera_move_size[1]),
            noise: self.noise.to_config(Vec3::z())?,
            o_star: self.noise.o_star.map(Vec3::from),
            prior_variance: b.prior_variance,
            propagate: PropagateOptions {
                initial_update: self.initial_update,
            },
            truth_noise: self.truth_noise.to_mode(),
        };
        if !(bounds.depth_range.0 < bounds.depth_range.1) || !(bounds.prior_variance >= 0.0) {
            return Err(Error::Config("invalid scenario bounds".into()));
        }
        if bounds.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        let config = AblationConfig {
            n_scenarios: self.scenarios,
            n_rollouts: self.rollouts,
            seed: self.seed,
            bounds,
            optimizer: self.optimizer.to_config()?,
            worst_case_factor: self.optimizer.worst_case_factor,
        };
        if config.n_scenarios == 0 || config.n_rollouts == 0 {
            return Err(Error::Config("scenarios and rollouts must be >= 1".into()));
        }
        Ok((config, suite))
    }
}

/// Provenance attached to every report.
#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub command: String,
    pub seed: u64,
    pub config: Value,
}

impl Meta {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config).expect("configs serialize"),
        }
    }

    fn json(&self) -> Value {
        json!({ "command": self.command, "seed": self.seed, "config": self.config })
    }

    fn csv_header(&self) -> String {
        format!(
            "# surestep {}\r\n# seed: {}\r\n# config: {}\r\n",
            self.command,
            self.seed,
            serde_json::to_string(&self.config).expect("values serialize")
        )
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn vec_json<const N: usize>(v: &nalgebra::SVector<f64, N>) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn mat_json(m: &Mat6) -> Value {
    json!((0..6)
        .map(|i| (0..6).map(|j| m[(i, j)]).collect::<Vec<f64>>())
        .collect::<Vec<_>>())
}

/// Float cell with 17 significant digits; non-finite values as `NaN`/`inf`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn csv_table(meta: &Meta, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8");
    meta.csv_header() + &body
}

pub fn trajectory_json(traj: &Trajectory, cameras: &CameraSchedule, meta: &Meta) -> String {
    let cams: Vec<CameraSpec> = cameras
        .entries()
        .iter()
        .map(|(s, c)| CameraSpec::from_camera(*s, c))
        .collect();
    pretty(&json!({
        "meta": meta.json(),
        "horizon": traj.horizon(),
        "waypoints": traj.waypoints().iter().map(|w| vec_json(&w.to_vec6())).collect::<Vec<_>>(),
        "cameras": cams,
    }))
}

/// Reads the `waypoints` array of a trajectory file.
pub fn read_trajectory_json(text: &str) -> Result<Trajectory> {
    #[derive(Deserialize)]
    struct File {
        waypoints: Vec<[f64; 6]>,
    }
    let f: File = serde_json::from_str(text).map_err(|e| Error::Config(format!("trajectory file: {e}")))?;
    Trajectory::new(f.waypoints.iter().map(|w| Pose::from_vec6(&Vec6::from(*w))).collect())
}

fn belief_json(t: usize, b: &Belief) -> Value {
    json!({
        "t": t,
        "mean": vec_json(&b.mean),
        "covariance": mat_json(&b.covariance),
        "trace": b.trace(),
        "entropy": entropy(b).ok(),
    })
}

/// Per-step beliefs of a maximum-likelihood propagation.
pub fn trace_json(trace: &BeliefTrace, meta: &Meta) -> String {
    let steps: Vec<Value> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut v = belief_json(i + 1, &s.updated);
            v["predicted_trace"] = json!(s.predicted.covariance.trace());
            v["motion_cov"] = mat_json(&s.motion_cov);
            v["obs_cov"] = mat_json(&s.obs_cov);
            v
        })
        .collect();
    pretty(&json!({
        "meta": meta.json(),
        "prior": belief_json(0, &trace.prior),
        "initial": belief_json(0, &trace.initial),
        "steps": steps,
        "final_trace": trace.final_belief().trace(),
        "final_entropy": entropy(trace.final_belief()).ok(),
    }))
}

pub fn history_csv(history: &[IterationRecord], meta: &Meta) -> String {
    csv_table(
        meta,
        &[
            "iteration",
            "trace",
            "pose_position",
            "pose_orientation",
            "total",
            "gradient_norm",
            "step_length",
        ],
        history.iter().map(|h| {
            vec![
                h.iteration.to_string(),
                num(h.loss.trace),
                num(h.loss.pose_position),
                num(h.loss.pose_orientation),
                num(h.loss.total),
                num(h.gradient_norm),
                num(h.step_length),
            ]
        }),
    )
}

const PLOT_HEADER: [&str; 15] = [
    "scenario",
    "variant",
    "step",
    "x",
    "y",
    "z",
    "ox",
    "oy",
    "oz",
    "u",
    "v",
    "depth",
    "pixel_distance",
    "trace",
    "entropy",
];

fn plot_rows(
    scenario: usize,
    variant: &str,
    traj: &Trajectory,
    cams: &CameraSchedule,
    trace: &BeliefTrace,
) -> Vec<Vec<String>> {
    traj.waypoints()
        .iter()
        .enumerate()
        .map(|(t, w)| {
            let cam = cams.camera_at(t);
            let (u, v, dist) = match cam.project(&w.position) {
                Ok(px) => (px.x, px.y, (px - cam.image_center()).norm()),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            };
            let b = trace.belief_at(t);
            vec![
                scenario.to_string(),
                variant.to_string(),
                t.to_string(),
                num(w.position.x),
                num(w.position.y),
                num(w.position.z),
                num(w.orientation.x),
                num(w.orientation.y),
                num(w.orientation.z),
                num(u),
                num(v),
                num(cam.camera_depth(&w.position)),
                num(dist),
                num(b.trace()),
                num(entropy(b).unwrap_or(f64::NAN)),
            ]
        })
        .collect()
}

/// Per-step path and uncertainty curves for labelled trajectories.
pub fn plot_csv(entries: &[(&str, &Trajectory, &BeliefTrace)], cams: &CameraSchedule, meta: &Meta) -> String {
    csv_table(
        meta,
        &PLOT_HEADER,
        entries
            .iter()
            .flat_map(|(name, traj, trace)| plot_rows(0, name, traj, cams, trace)),
    )
}

fn metrics_json(m: &Metrics) -> Value {
    let mut map = serde_json::Map::new();
    for (k, v) in Metrics::COLUMNS.iter().zip(m.values()) {
        map.insert((*k).to_string(), json!(v));
    }
    Value::Object(map)
}

pub fn ablation_json(table: &AblationTable, meta: &Meta) -> String {
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "variant": r.variant.name(),
                "label": r.variant.label(),
                "relative": metrics_json(&r.relative),
                "raw": metrics_json(&r.raw),
                "trial_failures": r.trial_failures,
            })
        })
        .collect();
    let failures: Vec<Value> = table
        .failures
        .iter()
        .map(|f| json!({ "scenario": f.index, "cause": f.cause }))
        .collect();
    pretty(&json!({
        "meta": meta.json(),
        "scenarios": table.config.n_scenarios,
        "rollouts": table.config.n_rollouts,
        "scenarios_succeeded": table.scenarios.len(),
        "scenario_failures": failures,
        "rows": rows,
    }))
}

pub fn ablation_csv(table: &AblationTable, meta: &Meta) -> String {
    let mut header = vec!["variant".to_string(), "label".to_string()];
    header.extend(Metrics::COLUMNS.iter().map(|c| format!("relative_{c}")));
    header.extend(Metrics::COLUMNS.iter().map(|c| format!("raw_{c}")));
    header.push("trial_failures".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_table(
        meta,
        &header,
        table.rows.iter().map(|r| {
            let mut row = vec![r.variant.name().to_string(), r.variant.label().to_string()];
            row.extend(r.relative.values().iter().map(|v| num(*v)));
            row.extend(r.raw.values().iter().map(|v| num(*v)));
            row.push(r.trial_failures.to_string());
            row
        }),
    )
}

/// One row per trial, failed trials included with their cause.
pub fn trials_csv(table: &AblationTable, meta: &Meta) -> String {
    let mut rows = Vec::new();
    for s in &table.scenarios {
        for v in &s.variants {
            let mut trials: Vec<(usize, Vec<String>)> = v
                .report
                .rows
                .iter()
                .map(|r| {
                    (
                        r.trial,
                        vec![
                            num(r.position_error),
                            num(r.orientation_error),
                            num(r.trace),
                            num(r.entropy),
                            String::new(),
                        ],
                    )
                })
                .chain(v.report.failures.iter().map(|f| {
                    (
                        f.trial,
                        vec![
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            f.cause.clone(),
                        ],
                    )
                }))
                .collect();
            trials.sort_by_key(|(t, _)| *t);
            for (t, cells) in trials {
                let mut row = vec![
                    s.index.to_string(),
                    s.scenario.seed.to_string(),
                    v.variant.name().to_string(),
                    t.to_string(),
                ];
                row.extend(cells);
                rows.push(row);
            }
        }
    }
    csv_table(
        meta,
        &[
            "scenario",
            "scenario_seed",
            "variant",
            "trial",
            "position_error",
            "orientation_error",
            "trace",
            "entropy",
            "failure",
        ],
        rows,
    )
}

/// Plot data of every variant of every successful scenario.
pub fn ablation_plot_csv(table: &AblationTable, meta: &Meta) -> Result<String> {
    let mut rows = Vec::new();
    for s in &table.scenarios {
        for v in &s.variants {
            let trace = s.scenario.propagate_ml(&v.trajectory)?;
            rows.extend(plot_rows(
                s.index,
                v.variant.name(),
                &v.trajectory,
                &s.scenario.cameras,
                &trace,
            ));
        }
    }
    Ok(csv_table(meta, &PLOT_HEADER, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [start]
        position = [-0.05, 0.02, 0.25]
        orientation = [1.0, -0.3, 0.2]

        [goal]
        position = [0.1, 0.0, 0.2]
        orientation = [0.2, 0.1, 1.0]

        [[cameras]]
        position = [0.0, 0.0, 0.0]
        fx = 500.0
        fy = 500.0
        width = 640.0
        height = 480.0
    "#;

    #[test]
    fn minimal_scenario_takes_reference_defaults() {
        let f = ScenarioFile::parse(MINIMAL).unwrap();
        let l = f.resolve().unwrap();
        assert_eq!(l.scenario.horizon, 10);
        assert_eq!(l.scenario.noise, NoiseConfig::reference(Vec3::new(0.2, 0.1, 1.0)));
        assert_eq!(l.scenario.prior.covariance, Mat6::identity() * 1e-2);
        assert_eq!(l.mask, AblationMask::ALL);
        assert_eq!(l.optimizer, OptimizerConfig::default());
        assert!(l.scenario.propagate.initial_update);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("fx = 500.0", "fx = 500.0\nfocal = 1.0");
        assert!(matches!(ScenarioFile::parse(&text), Err(Error::Config(_))));
        let text = format!("{MINIMAL}\n[noise]\nv_x0 = 1.0\n");
        assert!(ScenarioFile::parse(&text).is_err());
        assert!(AblationFile::parse("scenario = 3").is_err());
    }

    #[test]
    fn resolved_file_round_trips() {
        let l = ScenarioFile::parse(MINIMAL).unwrap().resolve().unwrap();
        let f = ScenarioFile::from_scenario(&l.scenario, &l.mask, &l.optimizer, l.worst_case_factor);
        let again = ScenarioFile::parse(&f.to_toml().unwrap()).unwrap();
        assert_eq!(again, f);
        assert_eq!(again.resolve().unwrap(), l);
    }

    #[test]
    fn covariances_accept_scalars_and_matrices() {
        let mut rows = [[0.0; 6]; 6];
        for (i, r) in rows.iter_mut().enumerate() {
            r[i] = (i + 1) as f64;
        }
        let m = CovSpec::Matrix(rows).to_matrix();
        assert_eq!(m[(5, 5)], 6.0);
        assert_eq!(CovSpec::from_matrix(&m), CovSpec::Matrix(rows));
        assert_eq!(CovSpec::from_matrix(&(Mat6::identity() * 0.5)), CovSpec::Scalar(0.5));
        let text = format!("{MINIMAL}\nprior = [[1,0,0,0,0,0],[0,1,0,0,0,0]]\n");
        assert!(ScenarioFile::parse(&text).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let text = MINIMAL.replace("fx = 500.0", "fx = -1.0");
        assert!(ScenarioFile::parse(&text).unwrap().resolve().is_err());
        let text = format!("{MINIMAL}\n[optimizer]\nworst_case_factor = 0.5\n");
        assert!(ScenarioFile::parse(&text).unwrap().resolve().is_err());
        let f = AblationFile {
            variants: vec!["all".into(), "everything".into()],
            ..Default::default()
        };
        assert!(f.resolve().is_err());
    }

    #[test]
    fn ablation_defaults_match_library_defaults() {
        let (cfg, suite) = AblationFile::default().resolve().unwrap();
        let lib = AblationConfig::default();
        assert_eq!(cfg.n_scenarios, lib.n_scenarios);
        assert_eq!(cfg.optimizer, lib.optimizer);
        assert_eq!(cfg.bounds, lib.bounds);
        assert_eq!(suite, AblationSuite::standard());
    }

    #[test]
    fn csv_numbers_use_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(num(f64::NAN), "NaN");
    }

    #[test]
    fn csv_fields_with_commas_are_quoted() {
        let meta = Meta::new("test", 1, &json!({"a": 1}));
        let out = csv_table(&meta, &["x", "y"], vec![vec!["1".into(), "a, b".into()]]);
        assert!(out.starts_with("# surestep test\r\n# seed: 1\r\n"));
        assert!(out.contains("\"a, b\""));
    }

    #[test]
    fn trajectory_file_round_trips() {
        let l = ScenarioFile::parse(MINIMAL).unwrap().resolve().unwrap();
        let traj = crate::sim_harness::make_baseline(&l.scenario).unwrap();
        let meta = Meta::new("test", 0, &json!(null));
        let text = trajectory_json(&traj, &l.scenario.cameras, &meta);
        assert_eq!(read_trajectory_json(&text).unwrap(), traj);
    }
}
