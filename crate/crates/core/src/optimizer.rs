//! Final-covariance trace objective, its gradient, and the L-BFGS driver.
//!
//! Decision variables are the `T - 1` free inter-waypoint deltas (position and
//! axis-angle increments). The last step, the clipping action, is re-derived
//! from the goal every time the waypoints are rebuilt, so `x_T == x^G` holds
//! exactly for every iterate.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::belief_engine::{propagate, Belief, BeliefTrace, PropagateOptions};
use crate::geometry::{angle_between, relative_rotation, right_jacobian, CameraSchedule, Pose};
use crate::noise_models::{
    motion_factor_gradients, observation_factor_gradients, stack, AblationMask, NoiseConfig, StateDependentNoise,
};
use crate::{Error, Mat6, Result, Vec3, Vec6};

/// Waypoints `x_0 .. x_T`; `x_T` is the goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Pose>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Pose>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory needs at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        if let Some(i) = waypoints.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidInput(format!("waypoint {i} is not finite")));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Pose] {
        &self.waypoints
    }

    pub fn horizon(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn start(&self) -> &Pose {
        &self.waypoints[0]
    }

    pub fn goal(&self) -> &Pose {
        &self.waypoints[self.waypoints.len() - 1]
    }

    /// Waypoints from index `step` on.
    pub fn suffix(&self, step: usize) -> Result<Self> {
        Self::new(self.waypoints[step.min(self.waypoints.len())..].to_vec())
    }

    /// Sum of segment lengths in position space.
    pub fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum()
    }
}

/// Everything the objective needs besides the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub cameras: CameraSchedule,
    pub noise: NoiseConfig,
    pub mask: AblationMask,
    pub prior: Belief,
    pub propagate: PropagateOptions,
}

impl Problem {
    pub fn noise_model(&self) -> StateDependentNoise {
        StateDependentNoise::new(self.noise.clone(), self.mask)
    }

    pub fn propagate(&self, traj: &Trajectory) -> Result<BeliefTrace> {
        propagate(traj, &self.cameras, &self.noise_model(), &self.prior, self.propagate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub trace: f64,
    pub pose_position: f64,
    pub pose_orientation: f64,
    pub total: f64,
}

/// Loss terms given an already computed propagation.
pub fn loss_from_trace(trace: &BeliefTrace, traj: &Trajectory, mask: &AblationMask) -> LossBreakdown {
    let tr = trace.final_belief().covariance.trace();
    let (pp, po) = if mask.use_pose_loss {
        let n = traj.waypoints.len();
        let (a, b) = (&traj.waypoints[n - 2], &traj.waypoints[n - 1]);
        (
            (b.position - a.position).norm(),
            angle_between(&a.orientation, &b.orientation),
        )
    } else {
        (0.0, 0.0)
    };
    LossBreakdown {
        trace: tr,
        pose_position: pp,
        pose_orientation: po,
        total: tr + pp + po,
    }
}

/// `Tr(Σ_T|T)` plus, when enabled, the size of the final step.
pub fn loss(traj: &Trajectory, problem: &Problem) -> Result<LossBreakdown> {
    let trace = problem.propagate(traj)?;
    Ok(loss_from_trace(&trace, traj, &problem.mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Reverse-mode pass through the filter recursion.
    #[default]
    Analytic,
    /// Central finite differences on every free waypoint coordinate.
    FiniteDifference,
}

fn frobenius(a: &Mat6, b: &Mat6) -> f64 {
    a.component_mul(b).sum()
}

/// Gradient of the total loss with respect to each waypoint. Entries for the
/// fixed endpoints are zero.
pub fn gradient(traj: &Trajectory, problem: &Problem, mode: GradientMode, fd_step: f64) -> Result<Vec<Vec6>> {
    let mut g = match mode {
        GradientMode::Analytic => analytic_gradient(traj, problem)?,
        GradientMode::FiniteDifference => finite_difference_gradient(traj, problem, fd_step)?,
    };
    let n = g.len();
    g[0] = Vec6::zeros();
    g[n - 1] = Vec6::zeros();
    if let Some(i) = g.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFiniteGradient { waypoint: i });
    }
    Ok(g)
}

fn analytic_gradient(traj: &Trajectory, problem: &Problem) -> Result<Vec<Vec6>> {
    let wps = &traj.waypoints;
    let cfg = &problem.noise;
    let mask = &problem.mask;
    let trace = problem.propagate(traj)?;
    let mut g = vec![Vec6::zeros(); wps.len()];
    let observe = mask.use_depth || mask.use_fov || mask.use_orientation;

    // adjoint of Σ_t|t, starting from d Tr(Σ_T|T) / dΣ_T|T = I
    let mut adj = Mat6::identity();
    for (t, step) in trace.steps.iter().enumerate().rev() {
        let (from, to) = (&wps[t], &wps[t + 1]);
        // Σ' = A P Aᵀ + K V Kᵀ with A = I - K, K = P (P + V)⁻¹
        let k = step.gain;
        let a = Mat6::identity() - k;
        let adj_v = k.transpose() * adj * k;
        let adj_p = a.transpose() * adj * a;

        if observe {
            let cam = problem.cameras.camera_at(t + 1);
            let (_, og) = observation_factor_gradients(to, cam, cfg).map_err(|e| e.at_step(t + 1))?;
            if mask.use_depth {
                g[t + 1] += og.depth * frobenius(&adj_v, &cfg.v_d0);
            }
            if mask.use_fov {
                g[t + 1] += og.fov * frobenius(&adj_v, &cfg.v_f0);
            }
            if mask.use_orientation {
                g[t + 1] += og.orientation * frobenius(&adj_v, &cfg.v_o0);
            }
        }

        let (_, mg) = motion_factor_gradients(from, to);
        let sp = frobenius(&adj_p, &cfg.w_p0);
        let so = frobenius(&adj_p, &cfg.w_o0);
        g[t] += mg.translation[0] * sp + mg.rotation[0] * so;
        g[t + 1] += mg.translation[1] * sp + mg.rotation[1] * so;

        adj = adj_p;
    }

    if mask.use_pose_loss {
        let n = wps.len();
        let (a, b) = (&wps[n - 2], &wps[n - 1]);
        let dp = b.position - a.position;
        let len = dp.norm();
        // subgradient 0 at the kinks
        let gp = if len > 0.0 { -dp / len } else { Vec3::zeros() };
        let r = relative_rotation(&a.orientation, &b.orientation);
        let theta = r.norm();
        let go = if theta > 0.0 {
            right_jacobian(&a.orientation).transpose() * r * (-1.0 / theta)
        } else {
            Vec3::zeros()
        };
        g[n - 2] += stack(&gp, &go);
        // the goal is fixed; its share is dropped by the caller
    }
    Ok(g)
}

fn finite_difference_gradient(traj: &Trajectory, problem: &Problem, h: f64) -> Result<Vec<Vec6>> {
    let n = traj.waypoints.len();
    let mut g = vec![Vec6::zeros(); n];
    let mut probe = traj.clone();
    for i in 1..n - 1 {
        for k in 0..6 {
            let base = traj.waypoints[i].to_vec6();
            let mut v = base;
            v[k] = base[k] + h;
            probe.waypoints[i] = Pose::from_vec6(&v);
            let plus = loss(&probe, problem)?.total;
            v[k] = base[k] - h;
            probe.waypoints[i] = Pose::from_vec6(&v);
            let minus = loss(&probe, problem)?.total;
            probe.waypoints[i] = traj.waypoints[i];
            g[i][k] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(g)
}

/// `max_i |a_i - b_i| / max(‖a‖∞, ‖b‖∞)` over all waypoint components.
pub fn gradient_relative_error(a: &[Vec6], b: &[Vec6]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.amax()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub history_size: usize,
    /// Sufficient-decrease constant of the strong Wolfe conditions.
    pub wolfe_c1: f64,
    /// Curvature constant of the strong Wolfe conditions.
    pub wolfe_c2: f64,
    pub max_line_search_evals: usize,
    pub gradient_mode: GradientMode,
    pub fd_step: f64,
    /// Stop once the relative loss decrease of an iteration drops below this.
    pub convergence_tol: f64,
    /// Largest coordinate change (m or rad) of the first trial step.
    pub initial_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            history_size: 10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_evals: 30,
            gradient_mode: GradientMode::Analytic,
            fd_step: 1e-6,
            convergence_tol: 1e-8,
            initial_step: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wolfe_c1", self.wolfe_c1),
            ("wolfe_c2", self.wolfe_c2),
            ("fd_step", self.fd_step),
            ("convergence_tol", self.convergence_tol),
            ("initial_step", self.initial_step),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
        }
        if self.max_iterations == 0 || self.history_size == 0 || self.max_line_search_evals == 0 {
            return Err(Error::InvalidInput(
                "max_iterations, history_size and max_line_search_evals must be >= 1".into(),
            ));
        }
        if self.wolfe_c1 >= self.wolfe_c2 || self.wolfe_c2 >= 1.0 {
            return Err(Error::InvalidInput("need 0 < wolfe_c1 < wolfe_c2 < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
    /// Norm of the gradient with respect to the decision variables.
    pub gradient_norm: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub trajectory: Trajectory,
    /// Entry 0 is the initial trajectory.
    pub history: Vec<IterationRecord>,
    /// Set when the search stopped because no acceptable step was found.
    pub line_search_failed: bool,
    pub evaluations: usize,
}

impl OptimizeReport {
    pub fn initial_loss(&self) -> &LossBreakdown {
        &self.history[0].loss
    }

    pub fn final_loss(&self) -> &LossBreakdown {
        &self.history[self.history.len() - 1].loss
    }
}

/// Optimization-time noise: every base covariance inflated by `factor >= 1`.
pub fn worst_case_scale(cfg: &NoiseConfig, factor: f64) -> Result<NoiseConfig> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "worst-case factor must be >= 1, got {factor}"
        )));
    }
    Ok(cfg.scaled(factor))
}

/// Decision-variable view of a trajectory with fixed endpoints.
struct DeltaParam {
    start: Pose,
    goal: Pose,
    free: usize,
    /// Position and orientation parts of the final step held at zero.
    lock: [bool; 2],
}

impl DeltaParam {
    fn new(traj: &Trajectory) -> Self {
        Self {
            start: *traj.start(),
            goal: *traj.goal(),
            free: traj.horizon() - 1,
            lock: [false; 2],
        }
    }

    fn encode(&self, traj: &Trajectory) -> DVector<f64> {
        let mut z = DVector::zeros(6 * self.free);
        for k in 0..self.free {
            let d = traj.waypoints[k + 1].to_vec6() - traj.waypoints[k].to_vec6();
            z.fixed_rows_mut::<6>(6 * k).copy_from(&d);
        }
        z
    }

    fn decode(&self, z: &DVector<f64>) -> Trajectory {
        let mut wps = Vec::with_capacity(self.free + 2);
        wps.push(self.start);
        let mut x = self.start.to_vec6();
        for k in 0..self.free {
            x += z.fixed_rows::<6>(6 * k);
            wps.push(Pose::from_vec6(&x));
        }
        if self.free > 0 {
            let last = wps.last_mut().expect("free waypoints exist");
            if self.lock[0] {
                last.position = self.goal.position;
            }
            if self.lock[1] {
                last.orientation = self.goal.orientation;
            }
        }
        wps.push(self.goal);
        Trajectory { waypoints: wps }
    }

    /// Chain rule from waypoint gradients to delta gradients: delta k moves
    /// every waypoint from k + 1 through T - 1.
    fn pull_back(&self, gx: &[Vec6]) -> DVector<f64> {
        let mut gz = DVector::zeros(6 * self.free);
        let mut acc = Vec6::zeros();
        for k in (0..self.free).rev() {
            acc += gx[k + 1];
            gz.fixed_rows_mut::<6>(6 * k).copy_from(&acc);
        }
        gz
    }

    /// Removes the components of `v` that would change a locked part of the
    /// final step, i.e. the per-coordinate mean over all deltas.
    fn project(&self, v: &mut DVector<f64>) {
        for (group, locked) in self.lock.iter().enumerate() {
            if !locked || self.free == 0 {
                continue;
            }
            for c in 3 * group..3 * group + 3 {
                let mean = (0..self.free).map(|k| v[6 * k + c]).sum::<f64>() / self.free as f64;
                for k in 0..self.free {
                    v[6 * k + c] -= mean;
                }
            }
        }
    }

    /// `z` with the final step's `group` part moved onto the goal.
    fn collapse(&self, z: &DVector<f64>, group: usize) -> DVector<f64> {
        let traj = self.decode(z);
        let n = traj.waypoints.len();
        let gap = self.goal.to_vec6() - traj.waypoints[n - 2].to_vec6();
        let mut out = z.clone();
        for c in 3 * group..3 * group + 3 {
            out[6 * (self.free - 1) + c] += gap[c];
        }
        out
    }
}

struct Evaluated {
    z: DVector<f64>,
    loss: LossBreakdown,
    grad: DVector<f64>,
    /// Waypoint-space gradient at the last free waypoint.
    last: Vec6,
}

struct Objective<'a> {
    param: DeltaParam,
    problem: &'a Problem,
    config: &'a OptimizerConfig,
    evaluations: usize,
}

impl Objective<'_> {
    fn evaluate(&mut self, z: &DVector<f64>) -> Result<Evaluated> {
        self.evaluations += 1;
        let traj = self.param.decode(z);
        let loss = loss(&traj, self.problem)?;
        let gx = gradient(&traj, self.problem, self.config.gradient_mode, self.config.fd_step)?;
        let mut grad = self.param.pull_back(&gx);
        self.param.project(&mut grad);
        Ok(Evaluated {
            z: z.clone(),
            loss,
            grad,
            last: gx[gx.len() - 2],
        })
    }

    /// Trial points that leave the feasible region evaluate to `None` (+∞).
    fn trial(&mut self, z: &DVector<f64>) -> Option<Evaluated> {
        self.evaluate(z).ok().filter(|e| e.loss.total.is_finite())
    }
}

fn two_loop(grad: &DVector<f64>, memory: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = -grad;
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    q
}

/// Strong-Wolfe line search (bracketing then zoom). Falls back to the best
/// sufficient-decrease point seen if the evaluation budget runs out.
fn strong_wolfe(obj: &mut Objective, current: &Evaluated, dir: &DVector<f64>, alpha0: f64) -> Option<(f64, Evaluated)> {
    let (c1, c2) = (obj.config.wolfe_c1, obj.config.wolfe_c2);
    let f0 = current.loss.total;
    let d0 = current.grad.dot(dir);
    let budget = obj.config.max_line_search_evals;
    let mut evals = 0;
    let armijo = |alpha: f64, f: f64| f <= f0 + c1 * alpha * d0;

    // (alpha, phi, dphi, evaluation) of the lower bracket end
    let mut lo: (f64, f64, f64, Option<Evaluated>) = (0.0, f0, d0, None);
    let mut hi: (f64, f64);
    let mut alpha = alpha0;

    loop {
        if evals >= budget {
            return lo.3.map(|e| (lo.0, e));
        }
        evals += 1;
        let z = &current.z + dir * alpha;
        match obj.trial(&z) {
            Some(e) if armijo(alpha, e.loss.total) && (lo.0 == 0.0 || e.loss.total < lo.1) => {
                let dphi = e.grad.dot(dir);
                if dphi.abs() <= -c2 * d0 {
                    return Some((alpha, e));
                }
                if dphi >= 0.0 {
                    hi = (lo.0, lo.1);
                    lo = (alpha, e.loss.total, dphi, Some(e));
                    break;
                }
                lo = (alpha, e.loss.total, dphi, Some(e));
                alpha *= 2.0;
            }
            Some(e) => {
                hi = (alpha, e.loss.total);
                break;
            }
            None => {
                hi = (alpha, f64::INFINITY);
                break;
            }
        }
    }

    // zoom between lo (sufficient decrease) and hi
    while evals < budget {
        evals += 1;
        let (a_lo, f_lo, d_lo) = (lo.0, lo.1, lo.2);
        let (a_hi, f_hi) = hi;
        let width = a_hi - a_lo;
        let mut alpha = a_lo + 0.5 * width;
        if f_hi.is_finite() {
            // minimizer of the quadratic through (lo, f_lo, d_lo) and (hi, f_hi)
            let denom = 2.0 * (f_hi - f_lo - d_lo * width);
            if denom > 0.0 {
                let cand = a_lo - d_lo * width * width / denom;
                let (l, h) = if width > 0.0 {
                    (a_lo + 0.1 * width, a_hi - 0.1 * width)
                } else {
                    (a_hi - 0.1 * width, a_lo + 0.1 * width)
                };
                let (l, h) = (l.min(h), l.max(h));
                if cand.is_finite() {
                    alpha = cand.clamp(l, h);
                }
            }
        }
        let z = &current.z + dir * alpha;
        match obj.trial(&z) {
            Some(e) if armijo(alpha, e.loss.total) && e.loss.total < f_lo => {
                let dphi = e.grad.dot(dir);
                if dphi.abs() <= -c2 * d0 {
                    return Some((alpha, e));
                }
                if dphi * (a_hi - a_lo) >= 0.0 {
                    hi = (a_lo, f_lo);
                }
                lo = (alpha, e.loss.total, dphi, Some(e));
            }
            Some(e) => hi = (alpha, e.loss.total),
            None => hi = (alpha, f64::INFINITY),
        }
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
    }
    lo.3.map(|e| (lo.0, e))
}

/// Backtracking along steepest descent, used when the quasi-Newton step fails.
fn backtracking(obj: &mut Objective, current: &Evaluated) -> Option<(f64, Evaluated)> {
    let f0 = current.loss.total;
    let g = &current.grad;
    let gmax = g.amax();
    if gmax == 0.0 {
        return None;
    }
    let mut alpha = obj.config.initial_step / gmax;
    for _ in 0..obj.config.max_line_search_evals {
        let z = &current.z - g * alpha;
        if let Some(e) = obj.trial(&z) {
            if e.loss.total <= f0 - obj.config.wolfe_c1 * alpha * g.norm_squared() && e.loss.total < f0 {
                return Some((alpha, e));
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Active-set handling of the pose-loss kinks. A part of the final step is
/// locked at zero once collapsing it does not raise the loss, and released
/// when the trace gradient there outweighs the unit slope of the pose loss.
/// Returns whether the lock state changed.
fn update_locks(obj: &mut Objective, current: &mut Evaluated) -> bool {
    if !obj.problem.mask.use_pose_loss || obj.param.free == 0 {
        return false;
    }
    let mut changed = false;
    for group in 0..2 {
        if obj.param.lock[group] {
            if current.last.fixed_rows::<3>(3 * group).norm() <= 1.0 {
                continue;
            }
            obj.param.lock[group] = false;
            match obj.trial(&current.z.clone()) {
                Some(e) if e.loss.total <= current.loss.total => {
                    *current = e;
                    changed = true;
                }
                _ => obj.param.lock[group] = true,
            }
        } else {
            let z = obj.param.collapse(&current.z, group);
            obj.param.lock[group] = true;
            match obj.trial(&z) {
                Some(e) if e.loss.total <= current.loss.total => {
                    *current = e;
                    changed = true;
                }
                _ => obj.param.lock[group] = false,
            }
        }
    }
    if changed {
        // gradient projected for the final lock state
        if let Some(e) = obj.trial(&current.z.clone()) {
            *current = e;
        }
    }
    changed
}

/// Minimizes the loss over the interior waypoints of `initial`.
///
/// The returned trajectory keeps the endpoints of `initial` bit-for-bit and
/// never has a higher total loss. Every accepted iterate strictly decreases
/// the loss, so the last iterate is also the best one.
pub fn optimize(initial: &Trajectory, problem: &Problem, config: &OptimizerConfig) -> Result<OptimizeReport> {
    config.validate()?;
    let mut obj = Objective {
        param: DeltaParam::new(initial),
        problem,
        config,
        evaluations: 0,
    };
    let z0 = obj.param.encode(initial);
    let mut current = obj.evaluate(&z0)?;
    if !current.loss.total.is_finite() {
        return Err(Error::InvalidInput(
            "loss is not finite at the initial trajectory".into(),
        ));
    }
    let mut history = vec![IterationRecord {
        iteration: 0,
        loss: current.loss,
        gradient_norm: current.grad.norm(),
        step_length: 0.0,
    }];
    let mut memory: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut line_search_failed = false;

    if obj.param.free > 0 {
        for iteration in 1..=config.max_iterations {
            let previous = current.loss.total;
            let relocked = update_locks(&mut obj, &mut current);
            if relocked {
                memory.clear();
            }
            let record = |current: &Evaluated, alpha: f64| IterationRecord {
                iteration,
                loss: current.loss,
                gradient_norm: current.grad.norm(),
                step_length: alpha,
            };
            let gmax = current.grad.amax();
            if gmax == 0.0 {
                if relocked {
                    history.push(record(&current, 0.0));
                }
                break;
            }
            let mut dir = two_loop(&current.grad, &memory);
            let mut alpha0 = 1.0;
            if memory.is_empty() || current.grad.dot(&dir) >= 0.0 {
                memory.clear();
                dir = -&current.grad;
                alpha0 = config.initial_step / gmax;
            }

            let accepted = strong_wolfe(&mut obj, &current, &dir, alpha0).or_else(|| {
                memory.clear();
                backtracking(&mut obj, &current)
            });
            let Some((alpha, mut next)) = accepted else {
                line_search_failed = true;
                if relocked {
                    history.push(record(&current, 0.0));
                }
                break;
            };

            // keep orientations canonical; a wrap invalidates the curvature pairs
            let traj = obj.param.decode(&next.z);
            if traj
                .waypoints
                .iter()
                .any(|w| w.orientation.norm() > std::f64::consts::PI)
            {
                let canon: Vec<Pose> = traj
                    .waypoints
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        if i == 0 || i == traj.waypoints.len() - 1 {
                            *w
                        } else {
                            w.canonical()
                        }
                    })
                    .collect();
                let z = obj.param.encode(&Trajectory { waypoints: canon });
                match obj.trial(&z) {
                    Some(e) if e.loss.total <= next.loss.total => {
                        next = e;
                        memory.clear();
                    }
                    _ => {}
                }
            } else {
                let s = &next.z - &current.z;
                let y = &next.grad - &current.grad;
                let sy = s.dot(&y);
                if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
                    if memory.len() == config.history_size {
                        memory.pop_front();
                    }
                    memory.push_back((s, y, 1.0 / sy));
                }
            }

            current = next;
            history.push(record(&current, alpha));
            let decrease = (previous - current.loss.total) / previous.abs().max(f64::MIN_POSITIVE);
            if decrease < config.convergence_tol {
                break;
            }
        }
    }

    Ok(OptimizeReport {
        trajectory: obj.param.decode(&current.z),
        history,
        line_search_failed,
        evaluations: obj.evaluations,
    })
}
