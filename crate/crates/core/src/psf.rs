//! Predictive safety filter.
//!
//! Each tick the filter linearizes the vessel model around a warm-start
//! input sequence (single shooting, condensed), solves a QP that keeps the
//! first input as close as possible to the proposal, and returns the first
//! input of the solution. Collision, velocity and terminal constraints are
//! soft with an L1 penalty; input bounds are hard.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::math;
use crate::qp::{self, QpProblem, QpRow, QpSettings, QpStatus};
use crate::sensing::{self, HitTarget, LidarConfig, LidarScan, MovingShip, World};
use crate::terminal::TerminalSet;
use crate::vessel::{
    max_surge_speed, ControlInput, GeneralizedForce, InputBounds, ModelError, Pose, StateVector,
    VesselModel, VesselState,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PsfError {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsfConfig {
    pub horizon: usize,
    pub dt: f64,
    pub inputs: InputBounds,
    /// Detection points kept per LiDAR sector.
    pub n_col: usize,
    pub avoid_radius: f64,
    pub safe_distance: f64,
    pub surge_weight: f64,
    pub yaw_weight: f64,
    /// L1 penalty on every slack.
    pub slack_penalty: f64,
    /// Small quadratic slack term that keeps the QP strictly convex.
    pub slack_quadratic: f64,
    /// Relative weight on steps of the inputs after the first one.
    pub input_regularization: f64,
    /// Soft velocity box `[lo, hi]` for surge, sway and yaw rate.
    pub velocity_bounds: [[f64; 2]; 3],
    pub cold_iterations: usize,
    pub warm_iterations: usize,
    /// SQP stops early once the largest input step falls below this.
    pub step_tolerance: f64,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
    /// Margin added to the per-node reach when pruning constraints.
    pub prune_margin: f64,
    /// Per node, only the closest detection point in each of this many
    /// bearing sectors is kept (0 keeps all).
    pub bearing_bins: usize,
    /// `|delta_u|` above which a tick counts as an intervention.
    pub intervention_threshold: f64,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            dt: 0.5,
            inputs: InputBounds::default(),
            n_col: 5,
            avoid_radius: 8.0,
            safe_distance: 5.0,
            surge_weight: 1.0,
            yaw_weight: 0.01,
            slack_penalty: 1e4,
            slack_quadratic: 1e-2,
            input_regularization: 1e-8,
            velocity_bounds: [[-0.5, 1.2], [-0.6, 0.6], [-0.6, 0.6]],
            cold_iterations: 5,
            warm_iterations: 1,
            step_tolerance: 1e-6,
            qp_tolerance: 1e-9,
            qp_max_iterations: 5000,
            prune_margin: 2.0,
            bearing_bins: 16,
            intervention_threshold: 1e-6,
        }
    }
}

impl PsfConfig {
    pub fn validate(&self) -> Result<(), PsfError> {
        self.inputs.validate()?;
        if self.horizon == 0 {
            return Err(PsfError::InvalidConfig("horizon must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(PsfError::InvalidConfig("dt must be positive"));
        }
        if !(self.avoid_radius >= 0.0 && self.safe_distance >= 0.0) {
            return Err(PsfError::InvalidConfig("distances must be non-negative"));
        }
        if !(self.surge_weight > 0.0 && self.yaw_weight > 0.0) {
            return Err(PsfError::InvalidConfig("cost weights must be positive"));
        }
        if !(self.slack_penalty > 0.0 && self.slack_quadratic > 0.0 && self.input_regularization > 0.0) {
            return Err(PsfError::InvalidConfig("penalties must be positive"));
        }
        if self.velocity_bounds.iter().any(|b| !(b[0] < b[1])) {
            return Err(PsfError::InvalidConfig("velocity bounds must satisfy lo < hi"));
        }
        if self.cold_iterations == 0 || self.warm_iterations == 0 {
            return Err(PsfError::InvalidConfig("iteration caps must be positive"));
        }
        Ok(())
    }

    pub fn cost_matrix(&self) -> CostMatrix {
        CostMatrix::new(self.surge_weight, self.yaw_weight, &self.inputs)
    }

    pub fn horizon_time(&self) -> f64 {
        self.horizon as f64 * self.dt
    }
}

/// Diagonal input weight normalized by the input ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub surge: f64,
    pub yaw: f64,
}

impl CostMatrix {
    pub fn new(surge_weight: f64, yaw_weight: f64, inputs: &InputBounds) -> Self {
        let df = inputs.surge_max - inputs.surge_min;
        let dt = inputs.yaw_max - inputs.yaw_min;
        Self {
            surge: surge_weight / (df * df),
            yaw: yaw_weight / (dt * dt),
        }
    }
}

pub fn filter_cost(u0: ControlInput, proposal: ControlInput, w: &CostMatrix) -> f64 {
    let d = u0 - proposal;
    w.surge * d.surge * d.surge + w.yaw * d.yaw * d.yaw
}

/// Obstacles seen by the filter in one tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub points: Vec<[f64; 2]>,
    pub ships: Vec<MovingShip>,
}

impl ObstacleSet {
    /// Detection points from a scan plus, when `ship_info` is set, the true
    /// ship states. With ship info, rays that hit ships are not turned into
    /// static points.
    pub fn from_scan(
        pose: &Pose,
        scan: &LidarScan,
        world: &World,
        lidar: &LidarConfig,
        n_col: usize,
        ship_info: bool,
    ) -> Self {
        if !ship_info {
            return Self {
                points: sensing::extract_detection_points(pose, scan, lidar, n_col),
                ships: Vec::new(),
            };
        }
        let mut filtered = scan.clone();
        for (range, hit) in filtered.ranges.iter_mut().zip(&scan.hits) {
            if matches!(hit, Some(HitTarget::Ship(_))) {
                *range = lidar.range;
            }
        }
        Self {
            points: sensing::extract_detection_points(pose, &filtered, lidar, n_col),
            ships: world.ships.clone(),
        }
    }
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that always reads zero, for builds without a time source.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsfStatus {
    Optimal,
    MaxIterations,
    /// Solved, but some slack is active.
    InfeasibleSoft,
    /// The QP failed and the terminal law was applied.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlackSummary {
    pub collision: f64,
    pub velocity: f64,
    pub terminal_distance: f64,
    pub terminal_set: f64,
}

impl SlackSummary {
    pub fn max(&self) -> f64 {
        self.collision
            .max(self.velocity)
            .max(self.terminal_distance)
            .max(self.terminal_set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfSolution {
    pub input: ControlInput,
    pub proposal: ControlInput,
    /// `proposal - input`.
    pub delta: ControlInput,
    pub states: Vec<[f64; 6]>,
    pub inputs: Vec<ControlInput>,
    pub slack: SlackSummary,
    pub status: PsfStatus,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub active_constraints: usize,
    pub constraint_rows: usize,
    pub solve_time: f64,
}

impl PsfSolution {
    pub fn delta_norm(&self) -> f64 {
        math::hypot(self.delta.surge, self.delta.yaw)
    }
}

/// Initial guess for the input sequence and the matching trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub states: Vec<[f64; 6]>,
    pub inputs: Vec<ControlInput>,
}

/// Warm start for a tick without history: constant state and the
/// equilibrium input.
pub fn cold_start(state: &VesselState, term: &TerminalSet, horizon: usize) -> WarmStart {
    let x = state.to_vector();
    WarmStart {
        states: vec![to_array(&x); horizon + 1],
        inputs: vec![term.equilibrium.input; horizon],
    }
}

/// Shifts a solution by one node. The last node is duplicated and the last
/// input comes from the terminal law at the last predicted velocity.
pub fn shift_warm_start(prev: &PsfSolution, term: &TerminalSet, bounds: &InputBounds) -> WarmStart {
    let mut states: Vec<[f64; 6]> = prev.states.iter().skip(1).copied().collect();
    let last = *prev.states.last().expect("solution has states");
    states.push(last);
    let mut inputs: Vec<ControlInput> = prev.inputs.iter().skip(1).copied().collect();
    inputs.push(term.control(&Vector3::new(last[3], last[4], last[5]), bounds));
    WarmStart { states, inputs }
}

fn to_array(x: &StateVector) -> [f64; 6] {
    [x[0], x[1], x[2], x[3], x[4], x[5]]
}

/// Nominal trajectory and its input sensitivities.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub states: Vec<StateVector>,
    pub inputs: Vec<ControlInput>,
    /// Row-major `6 x 2N` sensitivity of node `i` at offset `i * 12N`.
    sens: Vec<f64>,
}

impl Linearization {
    pub fn new(
        model: &VesselModel,
        x0: &StateVector,
        inputs: &[ControlInput],
        tau_d: &GeneralizedForce,
        dt: f64,
    ) -> Self {
        let n = inputs.len();
        let cols = 2 * n;
        let mut states = Vec::with_capacity(n + 1);
        states.push(*x0);
        let mut sens = vec![0.0; (n + 1) * 6 * cols];
        for i in 0..n {
            let (next, a, b) = model.rk4_with_jacobian(&states[i], inputs[i], tau_d, dt);
            let (cur, rest) = sens.split_at_mut((i + 1) * 6 * cols);
            let cur = &cur[i * 6 * cols..];
            let nxt = &mut rest[..6 * cols];
            for r in 0..6 {
                for c in 0..2 * i {
                    let mut acc = 0.0;
                    for k in 0..6 {
                        acc += a[(r, k)] * cur[k * cols + c];
                    }
                    nxt[r * cols + c] = acc;
                }
                nxt[r * cols + 2 * i] = b[(r, 0)];
                nxt[r * cols + 2 * i + 1] = b[(r, 1)];
            }
            states.push(next);
        }
        Self {
            states,
            inputs: inputs.to_vec(),
            sens,
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Sensitivity of state component `row` at node `node` to all inputs.
    pub fn sensitivity(&self, node: usize, row: usize) -> &[f64] {
        let cols = 2 * self.horizon();
        let start = (node * 6 + row) * cols;
        &self.sens[start..start + cols]
    }
}

/// Column layout of the condensed QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
}

impl Layout {
    pub fn input(&self, node: usize, k: usize) -> usize {
        2 * node + k
    }
    /// Collision slack of nodes `1..N`.
    pub fn collision_slack(&self, node: usize) -> usize {
        2 * self.horizon + node - 1
    }
    pub fn velocity_slack(&self) -> usize {
        3 * self.horizon - 1
    }
    pub fn terminal_distance_slack(&self) -> usize {
        3 * self.horizon
    }
    pub fn terminal_set_slack(&self) -> usize {
        3 * self.horizon + 1
    }
    pub fn n(&self) -> usize {
        3 * self.horizon + 2
    }
}

/// Parameters shared by all constraint rows of one assembly.
pub struct AssemblyContext<'a> {
    pub cfg: &'a PsfConfig,
    pub term: &'a TerminalSet,
    /// Maximum reachable surge speed, used for pruning.
    pub speed_max: f64,
}

fn distance_row(
    lin: &Linearization,
    node: usize,
    center: [f64; 2],
    radius: f64,
    slack: usize,
) -> Option<QpRow> {
    let p = lin.states[node];
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    let d = math::hypot(dx, dy);
    if d < 1e-9 {
        return None;
    }
    let (nx, ny) = (dx / d, dy / d);
    let sx = lin.sensitivity(node, 0);
    let sy = lin.sensitivity(node, 1);
    let coefs = (0..2 * node).map(|c| nx * sx[c] + ny * sy[c]).collect();
    Some(QpRow {
        start: 0,
        coefs,
        extra: Some((slack, 1.0)),
        // Linearized ||p - c||^2 >= R^2, scaled by 1 / (2 d).
        rhs: (radius * radius - d * d) / (2.0 * d),
    })
}

/// Builds the condensed QP around `lin`.
pub fn assemble(
    lin: &Linearization,
    proposal: ControlInput,
    obstacles: &ObstacleSet,
    ctx: &AssemblyContext,
) -> (QpProblem, Layout) {
    let cfg = ctx.cfg;
    let n_nodes = lin.horizon();
    let layout = Layout { horizon: n_nodes };
    let mut p = QpProblem::new(layout.n());
    let w = cfg.cost_matrix();
    let weights = [w.surge, w.yaw];
    let lower = cfg.inputs.lower();
    let upper = cfg.inputs.upper();

    for i in 0..n_nodes {
        let u_bar = lin.inputs[i].to_array();
        for k in 0..2 {
            let col = layout.input(i, k);
            if i == 0 {
                p.hessian_diag[col] = 2.0 * weights[k];
                p.linear[col] = 2.0 * weights[k] * (u_bar[k] - proposal.to_array()[k]);
            } else {
                p.hessian_diag[col] = 2.0 * cfg.input_regularization * weights[k];
            }
            p.lower[col] = lower[k] - u_bar[k];
            p.upper[col] = upper[k] - u_bar[k];
        }
    }
    for col in 2 * n_nodes..layout.n() {
        p.hessian_diag[col] = 2.0 * cfg.slack_quadratic;
        p.linear[col] = cfg.slack_penalty;
        p.lower[col] = 0.0;
    }

    // Velocity box on every predicted node.
    for node in 1..=n_nodes {
        let x = &lin.states[node];
        for k in 0..3 {
            let s = lin.sensitivity(node, 3 + k);
            let [lo, hi] = cfg.velocity_bounds[k];
            p.rows.push(QpRow {
                start: 0,
                coefs: s[..2 * node].iter().map(|v| -v).collect(),
                extra: Some((layout.velocity_slack(), 1.0)),
                rhs: x[3 + k] - hi,
            });
            p.rows.push(QpRow {
                start: 0,
                coefs: s[..2 * node].to_vec(),
                extra: Some((layout.velocity_slack(), 1.0)),
                rhs: lo - x[3 + k],
            });
        }
    }

    // Collision constraints with horizon-level and per-node pruning.
    let x0 = lin.states[0];
    let horizon_reach = n_nodes as f64 * cfg.dt * ctx.speed_max;
    let base_radius = cfg.avoid_radius + cfg.safe_distance;
    let d_f = ctx.term.d_f;
    let node_reach = |node: usize| 2.0 * ctx.speed_max * node as f64 * cfg.dt + cfg.prune_margin;
    let points: Vec<[f64; 2]> = obstacles
        .points
        .iter()
        .copied()
        .filter(|c| math::hypot(x0[0] - c[0], x0[1] - c[1]) <= horizon_reach + base_radius + d_f)
        .collect();
    let horizon_time = n_nodes as f64 * cfg.dt;
    let ships: Vec<&MovingShip> = obstacles
        .ships
        .iter()
        .filter(|s| {
            let reach = horizon_reach + s.hazard_radius() + cfg.safe_distance + d_f;
            segment_distance([x0[0], x0[1]], s.position, s.velocity, horizon_time) <= reach
        })
        .collect();
    let mut bins: Vec<Option<(f64, [f64; 2])>> = Vec::new();
    for node in 1..=n_nodes {
        let terminal = node == n_nodes;
        let (slack, extra) = if terminal {
            (layout.terminal_distance_slack(), d_f)
        } else {
            (layout.collision_slack(node), 0.0)
        };
        let pos = [lin.states[node][0], lin.states[node][1]];
        let reach = node_reach(node);
        let t = node as f64 * cfg.dt;
        let mut push = |center: [f64; 2], radius: f64| {
            if let Some(row) = distance_row(lin, node, center, radius, slack) {
                p.rows.push(row);
            }
        };
        let radius = base_radius + extra;
        if cfg.bearing_bins == 0 {
            for c in &points {
                if math::hypot(pos[0] - c[0], pos[1] - c[1]) - radius <= reach {
                    push(*c, radius);
                }
            }
        } else {
            bins.clear();
            bins.resize(cfg.bearing_bins, None);
            for c in &points {
                let (dx, dy) = (c[0] - pos[0], c[1] - pos[1]);
                let d = math::hypot(dx, dy);
                if d - radius > reach {
                    continue;
                }
                let a = math::atan2(dy, dx) + core::f64::consts::PI;
                let bin = ((a / core::f64::consts::TAU * cfg.bearing_bins as f64) as usize)
                    .min(cfg.bearing_bins - 1);
                if bins[bin].map_or(true, |(best, _)| d < best) {
                    bins[bin] = Some((d, *c));
                }
            }
            for (_, c) in bins.iter().flatten() {
                push(*c, radius);
            }
        }
        for s in &ships {
            let center = [s.position[0] + s.velocity[0] * t, s.position[1] + s.velocity[1] * t];
            let radius = s.hazard_radius() + cfg.safe_distance + extra;
            if math::hypot(pos[0] - center[0], pos[1] - center[1]) - radius <= reach {
                push(center, radius);
            }
        }
    }

    // Terminal velocity ellipsoid: tangent plane at the radial projection of
    // the nominal terminal velocity, plus the bounding box of the ellipsoid.
    let p_nu = ctx.term.p_nu_matrix();
    let nu_e = Vector3::new(
        ctx.term.equilibrium.state[3],
        ctx.term.equilibrium.state[4],
        ctx.term.equilibrium.state[5],
    );
    let x_n = lin.states[n_nodes];
    let nu_bar = Vector3::new(x_n[3], x_n[4], x_n[5]) - nu_e;
    let level = (nu_bar.transpose() * p_nu * nu_bar)[0];
    let sens_nu = [
        lin.sensitivity(n_nodes, 3),
        lin.sensitivity(n_nodes, 4),
        lin.sensitivity(n_nodes, 5),
    ];
    let cols = 2 * n_nodes;
    if level > 1e-12 {
        let g = p_nu * nu_bar / math::sqrt(level);
        let coefs = (0..cols)
            .map(|c| -(g[0] * sens_nu[0][c] + g[1] * sens_nu[1][c] + g[2] * sens_nu[2][c]))
            .collect();
        p.rows.push(QpRow {
            start: 0,
            coefs,
            extra: Some((layout.terminal_set_slack(), 1.0)),
            rhs: math::sqrt(level) - 1.0,
        });
    }
    if let Some(inv) = p_nu.try_inverse() {
        for k in 0..3 {
            let half = math::sqrt(inv[(k, k)]);
            p.rows.push(QpRow {
                start: 0,
                coefs: sens_nu[k].iter().map(|v| -v).collect(),
                extra: Some((layout.terminal_set_slack(), 1.0)),
                rhs: nu_bar[k] - half,
            });
            p.rows.push(QpRow {
                start: 0,
                coefs: sens_nu[k].to_vec(),
                extra: Some((layout.terminal_set_slack(), 1.0)),
                rhs: -half - nu_bar[k],
            });
        }
    }
    (p, layout)
}

/// Closest distance between a fixed point and a ship track over `[0, t_max]`.
fn segment_distance(p: [f64; 2], start: [f64; 2], vel: [f64; 2], t_max: f64) -> f64 {
    let rel = [p[0] - start[0], p[1] - start[1]];
    let vv = vel[0] * vel[0] + vel[1] * vel[1];
    let t = if vv > 0.0 {
        math::clamp((rel[0] * vel[0] + rel[1] * vel[1]) / vv, 0.0, t_max)
    } else {
        0.0
    };
    math::hypot(rel[0] - vel[0] * t, rel[1] - vel[1] * t)
}

/// Stateful filter holding the warm start between ticks.
#[derive(Debug, Clone)]
pub struct SafetyFilter {
    model: VesselModel,
    term: TerminalSet,
    cfg: PsfConfig,
    speed_max: f64,
    previous: Option<PsfSolution>,
}

impl SafetyFilter {
    pub fn new(model: VesselModel, term: TerminalSet, cfg: PsfConfig) -> Result<Self, PsfError> {
        cfg.validate()?;
        if !(term.d_f > 0.0) {
            return Err(PsfError::InvalidConfig("terminal set has no distance buffer"));
        }
        if term.p_nu_matrix().cholesky().is_none() {
            return Err(PsfError::InvalidConfig("terminal shape matrix is not positive definite"));
        }
        let speed_max = max_surge_speed(&model.params, cfg.inputs.surge_max)?;
        Ok(Self {
            model,
            term,
            cfg,
            speed_max,
            previous: None,
        })
    }

    pub fn config(&self) -> &PsfConfig {
        &self.cfg
    }

    pub fn terminal_set(&self) -> &TerminalSet {
        &self.term
    }

    pub fn speed_max(&self) -> f64 {
        self.speed_max
    }

    /// Drops the warm start.
    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn warm_start(&self, state: &VesselState) -> WarmStart {
        match &self.previous {
            Some(prev) => shift_warm_start(prev, &self.term, &self.cfg.inputs),
            None => cold_start(state, &self.term, self.cfg.horizon),
        }
    }

    /// Filters one proposal. Never fails: a QP failure yields the terminal law.
    pub fn filter(
        &mut self,
        state: &VesselState,
        proposal: ControlInput,
        tau_d: &GeneralizedForce,
        obstacles: &ObstacleSet,
        clock: &dyn Clock,
    ) -> PsfSolution {
        let start = clock.now();
        let cold = self.previous.is_none();
        let mut inputs = self.warm_start(state).inputs;
        let x0 = state.to_vector();
        let mut max_iter = if cold {
            self.cfg.cold_iterations
        } else {
            self.cfg.warm_iterations
        };
        let ctx = AssemblyContext {
            cfg: &self.cfg,
            term: &self.term,
            speed_max: self.speed_max,
        };
        let settings = QpSettings {
            tolerance: self.cfg.qp_tolerance,
            max_iterations: self.cfg.qp_max_iterations,
        };

        let mut qp_iterations = 0;
        let mut slack = SlackSummary::default();
        let mut active = 0;
        let mut rows = 0;
        let mut converged = false;
        let mut failed = false;
        let mut sqp_iterations = 0;
        while sqp_iterations < max_iter {
            sqp_iterations += 1;
            let lin = Linearization::new(&self.model, &x0, &inputs, tau_d, self.cfg.dt);
            let (problem, layout) = assemble(&lin, proposal, obstacles, &ctx);
            let sol = qp::solve(&problem, &settings);
            qp_iterations += sol.iterations;
            rows = problem.rows.len();
            if sol.status != QpStatus::Optimal {
                failed = true;
                break;
            }
            active = sol.active.len();
            let mut step: f64 = 0.0;
            for (i, u) in inputs.iter_mut().enumerate() {
                let du = [sol.z[layout.input(i, 0)], sol.z[layout.input(i, 1)]];
                step = step.max(du[0].abs()).max(du[1].abs());
                *u = self.cfg.inputs.clamp(ControlInput::new(u.surge + du[0], u.yaw + du[1]));
            }
            slack = SlackSummary {
                collision: (1..layout.horizon)
                    .map(|i| sol.z[layout.collision_slack(i)])
                    .fold(0.0, f64::max),
                velocity: sol.z[layout.velocity_slack()],
                terminal_distance: sol.z[layout.terminal_distance_slack()],
                terminal_set: sol.z[layout.terminal_set_slack()],
            };
            if step < self.cfg.step_tolerance {
                converged = true;
                break;
            }
            // Active slack on a warm tick: allow the cold-start budget.
            if !cold && sqp_iterations == max_iter && slack.max() > 1e-6 {
                max_iter = self.cfg.cold_iterations.max(max_iter);
            }
        }

        let states = if failed { None } else { self.rollout(&x0, &inputs, tau_d) };
        let solution = match states {
            Some(states) => {
                let status = if slack.max() > 1e-6 {
                    PsfStatus::InfeasibleSoft
                } else if cold && !converged {
                    PsfStatus::MaxIterations
                } else {
                    PsfStatus::Optimal
                };
                let input = inputs[0];
                PsfSolution {
                    input,
                    proposal,
                    delta: proposal - input,
                    states,
                    inputs,
                    slack,
                    status,
                    sqp_iterations,
                    qp_iterations,
                    active_constraints: active,
                    constraint_rows: rows,
                    solve_time: 0.0,
                }
            }
            None => self.fallback(state, proposal, sqp_iterations, qp_iterations, rows, tau_d),
        };
        let mut solution = solution;
        solution.solve_time = (clock.now() - start).max(0.0);
        self.previous = if solution.status == PsfStatus::Fallback {
            None
        } else {
            Some(solution.clone())
        };
        solution
    }

    fn rollout(
        &self,
        x0: &StateVector,
        inputs: &[ControlInput],
        tau_d: &GeneralizedForce,
    ) -> Option<Vec<[f64; 6]>> {
        let mut x = *x0;
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(to_array(&x));
        for u in inputs {
            x = self.model.rk4(&x, *u, tau_d, self.cfg.dt);
            if x.iter().any(|v| !v.is_finite()) {
                return None;
            }
            states.push(to_array(&x));
        }
        Some(states)
    }

    fn fallback(
        &self,
        state: &VesselState,
        proposal: ControlInput,
        sqp_iterations: usize,
        qp_iterations: usize,
        rows: usize,
        tau_d: &GeneralizedForce,
    ) -> PsfSolution {
        let mut x = state.to_vector();
        let mut states = vec![to_array(&x)];
        let mut inputs = Vec::with_capacity(self.cfg.horizon);
        for _ in 0..self.cfg.horizon {
            let u = self.term.control(&Vector3::new(x[3], x[4], x[5]), &self.cfg.inputs);
            inputs.push(u);
            x = self.model.rk4(&x, u, tau_d, self.cfg.dt);
            states.push(to_array(&x));
        }
        let input = inputs[0];
        PsfSolution {
            input,
            proposal,
            delta: proposal - input,
            states,
            inputs,
            slack: SlackSummary::default(),
            status: PsfStatus::Fallback,
            sqp_iterations,
            qp_iterations,
            active_constraints: 0,
            constraint_rows: rows,
            solve_time: 0.0,
        }
    }
}

/// Level of the terminal velocity of a predicted trajectory.
pub fn terminal_level(term: &TerminalSet, states: &[[f64; 6]]) -> f64 {
    let x = states.last().expect("non-empty trajectory");
    term.level(&Vector3::new(x[3], x[4], x[5]))
}

/// Shape matrix of the terminal set, convenience for callers.
pub fn terminal_shape(term: &TerminalSet) -> Matrix3<f64> {
    term.p_nu_matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::StaticObstacle;
    use crate::terminal::{synthesize_verified, TerminalSetSpec, VerifyConfig};
    use crate::vessel::HydroParams;
    use std::sync::OnceLock;

    fn terminal() -> &'static TerminalSet {
        static TERM: OnceLock<TerminalSet> = OnceLock::new();
        TERM.get_or_init(|| {
            let spec = TerminalSetSpec {
                verify: VerifyConfig {
                    samples: 200,
                    ..VerifyConfig::default()
                },
                ..TerminalSetSpec::default()
            };
            synthesize_verified(&spec).expect("default terminal set")
        })
    }

    fn filter() -> SafetyFilter {
        let model = VesselModel::new(HydroParams::default()).unwrap();
        SafetyFilter::new(model, terminal().clone(), PsfConfig::default()).unwrap()
    }

    fn model() -> VesselModel {
        VesselModel::new(HydroParams::default()).unwrap()
    }

    #[test]
    fn cost_normalization() {
        let cfg = PsfConfig::default();
        let w = cfg.cost_matrix();
        let u = ControlInput::new(0.3, -0.1);
        assert_eq!(filter_cost(u, u, &w), 0.0);
        let full_surge = ControlInput::new(u.surge + 2.2, u.yaw);
        assert!((filter_cost(full_surge, u, &w) - 1.0).abs() < 1e-12);
        let full_yaw = ControlInput::new(u.surge, u.yaw + 0.3);
        assert!((filter_cost(full_yaw, u, &w) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn horizon_is_25_seconds() {
        assert_eq!(PsfConfig::default().horizon_time(), 25.0);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = PsfConfig {
            horizon: 0,
            ..PsfConfig::default()
        };
        assert!(SafetyFilter::new(model(), terminal().clone(), cfg).is_err());
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let m = model();
        let x0 = StateVector::new(1.0, -2.0, 0.3, 0.4, 0.02, -0.05);
        let inputs: Vec<ControlInput> =
            (0..6).map(|i| ControlInput::new(1.0 + 0.1 * i as f64, 0.05 - 0.02 * i as f64)).collect();
        let tau = GeneralizedForce::new(0.1, -0.05, 0.01);
        let lin = Linearization::new(&m, &x0, &inputs, &tau, 0.5);
        let h = 1e-6;
        for j in 0..inputs.len() {
            for k in 0..2 {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                if k == 0 {
                    plus[j].surge += h;
                    minus[j].surge -= h;
                } else {
                    plus[j].yaw += h;
                    minus[j].yaw -= h;
                }
                let lp = Linearization::new(&m, &x0, &plus, &tau, 0.5);
                let lm = Linearization::new(&m, &x0, &minus, &tau, 0.5);
                for node in 1..=inputs.len() {
                    for r in 0..6 {
                        let fd = (lp.states[node][r] - lm.states[node][r]) / (2.0 * h);
                        let an = lin.sensitivity(node, r)[2 * j + k];
                        assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "node {node} row {r}");
                    }
                }
            }
        }
    }

    #[test]
    fn empty_world_has_only_velocity_and_terminal_rows() {
        let m = model();
        let term = terminal();
        let cfg = PsfConfig::default();
        let x0 = StateVector::new(0.0, 0.0, 0.0, 0.3, 0.0, 0.0);
        let lin = Linearization::new(&m, &x0, &vec![ControlInput::ZERO; cfg.horizon], &GeneralizedForce::ZERO, cfg.dt);
        let ctx = AssemblyContext { cfg: &cfg, term, speed_max: 0.578 };
        let (p, layout) = assemble(&lin, ControlInput::ZERO, &ObstacleSet::default(), &ctx);
        assert_eq!(layout.n(), 152);
        // 6 velocity rows per node, 1 tangent row and 6 box rows at the end.
        assert_eq!(p.rows.len(), 6 * cfg.horizon + 7);
    }

    #[test]
    fn ship_constraint_moves_with_the_ship() {
        let m = model();
        let term = terminal();
        let cfg = PsfConfig::default();
        let x0 = StateVector::zeros();
        let lin = Linearization::new(&m, &x0, &vec![ControlInput::ZERO; cfg.horizon], &GeneralizedForce::ZERO, cfg.dt);
        let ship = MovingShip { position: [10.0, 0.0], velocity: [0.4, 0.0], heading: 0.0, length: 3.0 };
        let obstacles = ObstacleSet { points: Vec::new(), ships: vec![ship] };
        let ctx = AssemblyContext { cfg: &cfg, term, speed_max: 0.578 };
        let (p, _) = assemble(&lin, ControlInput::ZERO, &obstacles, &ctx);
        let empty = assemble(&lin, ControlInput::ZERO, &ObstacleSet::default(), &ctx).0;
        let extra: Vec<&QpRow> = p.rows.iter().filter(|r| !empty.rows.contains(r)).collect();
        assert!(!extra.is_empty());
        // Vessel stays at the origin, so d at node i is 10 + 0.4 i dt.
        for node in [1usize, 10, 30, 50] {
            let d = 10.0 + 0.4 * node as f64 * cfg.dt;
            let mut radius = 3.0 + cfg.safe_distance;
            if node == cfg.horizon {
                radius += term.d_f;
            }
            let rhs = (radius * radius - d * d) / (2.0 * d);
            assert!(extra.iter().any(|r| (r.rhs - rhs).abs() < 1e-9 && r.coefs.len() == 2 * node));
        }
    }

    #[test]
    fn open_water_proposal_passes_unchanged() {
        let mut f = filter();
        let m = model();
        let mut state = VesselState::new(0.0, 0.0, 0.0, 0.3, 0.0, 0.0);
        for tick in 0..60 {
            let proposal = ControlInput::new(1.0, 0.02 * math::sin(0.1 * tick as f64));
            let sol = f.filter(&state, proposal, &GeneralizedForce::ZERO, &ObstacleSet::default(), &NoClock);
            assert!(sol.delta_norm() <= 1e-6, "tick {tick}: {:?} {:?}", sol.delta, sol.status);
            state = m.step(&state, sol.input, &GeneralizedForce::ZERO, 0.5).unwrap();
        }
    }

    #[test]
    fn retreats_when_starting_inside_the_margin() {
        let mut f = filter();
        let m = model();
        let point = [12.0, 0.0];
        let obstacles = ObstacleSet { points: vec![point], ships: Vec::new() };
        let mut state = VesselState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut last = 12.0;
        for tick in 0..40 {
            let sol = f.filter(&state, ControlInput::ZERO, &GeneralizedForce::ZERO, &obstacles, &NoClock);
            if tick == 0 {
                assert!(sol.delta_norm() > 1e-6);
                assert!(sol.slack.collision > 0.0);
            }
            state = m.step(&state, sol.input, &GeneralizedForce::ZERO, 0.5).unwrap();
            let d = math::hypot(state.pose.x - point[0], state.pose.y - point[1]);
            assert!(d >= last - 1e-9, "tick {tick}: {d} < {last}");
            last = d;
        }
        assert!(last > 12.0);
    }

    fn wall_world() -> World {
        // A row of large discs forming a wall 100 m ahead.
        let statics = (-10..=10)
            .map(|k| StaticObstacle { center: [130.0, 20.0 * k as f64], radius: 30.0 })
            .collect();
        World { statics, ships: Vec::new() }
    }

    #[test]
    fn full_thrust_into_wall_stays_clear() {
        let mut f = filter();
        let m = model();
        let world = wall_world();
        let lidar = LidarConfig::default();
        let mut state = VesselState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut min_clearance = f64::INFINITY;
        let mut first_intervention = None;
        for tick in 0..600 {
            let scan = sensing::raycast(&state.pose, &world, &lidar);
            let obstacles = ObstacleSet::from_scan(&state.pose, &scan, &world, &lidar, 5, true);
            let sol = f.filter(&state, ControlInput::new(2.0, 0.0), &GeneralizedForce::ZERO, &obstacles, &NoClock);
            assert!(f.config().inputs.contains(sol.input));
            if sol.delta_norm() > 1e-6 && first_intervention.is_none() {
                first_intervention = Some(tick);
            }
            state = m.step(&state, sol.input, &GeneralizedForce::ZERO, 0.5).unwrap();
            min_clearance = min_clearance.min(world.clearance(state.position()));
        }
        assert!(min_clearance >= 5.0, "clearance {min_clearance}");
        // Free running until the wall is close.
        assert!(first_intervention.unwrap() > 100);
    }

    #[test]
    fn prefers_yaw_over_surge_modification() {
        // Nearly head-on approach; the small offset breaks the left/right tie.
        let mut f = filter();
        let m = model();
        let obstacles = ObstacleSet { points: vec![[60.0, 1.0]], ships: Vec::new() };
        let inputs = f.config().inputs;
        let mut state = VesselState::new(0.0, 0.0, 0.0, 0.5, 0.0, 0.0);
        let (mut surge, mut yaw) = (0.0, 0.0);
        for _ in 0..200 {
            let sol = f.filter(&state, ControlInput::new(2.0, 0.0), &GeneralizedForce::ZERO, &obstacles, &NoClock);
            let [f_max, t_max] = inputs.magnitude();
            surge += sol.delta.surge.abs() / f_max;
            yaw += sol.delta.yaw.abs() / t_max;
            state = m.step(&state, sol.input, &GeneralizedForce::ZERO, 0.5).unwrap();
        }
        assert!(yaw > 0.0);
        assert!(yaw > surge, "surge {surge} yaw {yaw}");
    }

    #[test]
    fn deterministic() {
        let world = wall_world();
        let lidar = LidarConfig::default();
        let run = || {
            let mut f = filter();
            let m = model();
            let mut state = VesselState::new(60.0, 5.0, 0.2, 0.5, 0.0, 0.0);
            let mut out = Vec::new();
            for _ in 0..20 {
                let scan = sensing::raycast(&state.pose, &world, &lidar);
                let obs = ObstacleSet::from_scan(&state.pose, &scan, &world, &lidar, 5, true);
                let sol = f.filter(&state, ControlInput::new(2.0, 0.05), &GeneralizedForce::ZERO, &obs, &NoClock);
                state = m.step(&state, sol.input, &GeneralizedForce::ZERO, 0.5).unwrap();
                out.push(sol);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shift_moves_nodes_forward() {
        let mut f = filter();
        let state = VesselState::new(0.0, 0.0, 0.0, 0.3, 0.0, 0.0);
        let sol = f.filter(&state, ControlInput::new(1.0, 0.0), &GeneralizedForce::ZERO, &ObstacleSet::default(), &NoClock);
        let warm = shift_warm_start(&sol, terminal(), &f.config().inputs);
        assert_eq!(warm.states.len(), sol.states.len());
        for i in 0..sol.states.len() - 1 {
            assert_eq!(warm.states[i], sol.states[i + 1]);
        }
        assert_eq!(warm.states.last(), sol.states.last());
        assert_eq!(warm.inputs[..warm.inputs.len() - 1], sol.inputs[1..]);
        let cold = cold_start(&state, terminal(), 50);
        assert!(cold.states.iter().all(|s| *s == to_array(&state.to_vector())));
        assert!(cold.inputs.iter().all(|u| *u == ControlInput::ZERO));
    }

    #[test]
    fn warm_start_needs_fewer_iterations() {
        let world = wall_world();
        let lidar = LidarConfig::default();
        let m = model();
        let run = |warm: bool| {
            let mut f = filter();
            let mut state = VesselState::new(40.0, 0.0, 0.1, 0.4, 0.0, 0.0);
            let mut iters = Vec::new();
            for _ in 0..100 {
                if !warm {
                    f.reset();
                }
                let scan = sensing::raycast(&state.pose, &world, &lidar);
                let obs = ObstacleSet::from_scan(&state.pose, &scan, &world, &lidar, 5, true);
                let sol = f.filter(&state, ControlInput::new(2.0, 0.0), &GeneralizedForce::ZERO, &obs, &NoClock);
                iters.push(sol.sqp_iterations * 10_000 + sol.qp_iterations);
                state = m.step(&state, sol.input, &GeneralizedForce::ZERO, 0.5).unwrap();
            }
            iters.sort_unstable();
            iters[50]
        };
        assert!(run(true) < run(false));
    }

    #[test]
    fn fallback_is_terminal_law() {
        let mut cfg = PsfConfig::default();
        cfg.qp_max_iterations = 1;
        let mut f = SafetyFilter::new(model(), terminal().clone(), cfg).unwrap();
        let obstacles = ObstacleSet { points: vec![[12.0, 0.0]], ships: Vec::new() };
        let state = VesselState::new(0.0, 0.0, 0.0, 0.05, 0.01, 0.02);
        let sol = f.filter(&state, ControlInput::new(2.0, 0.0), &GeneralizedForce::ZERO, &obstacles, &NoClock);
        assert_eq!(sol.status, PsfStatus::Fallback);
        let expected = terminal().control(&Vector3::new(0.05, 0.01, 0.02), &f.config().inputs);
        assert_eq!(sol.input, expected);
    }
}
