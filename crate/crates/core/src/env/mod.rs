//! Scenario generation, episode stepping, rewards, observations and metrics.

pub mod path;
pub mod reward;
pub mod scenario;

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::disturbance::{
    self, current_force, observer_estimate, observer_gain_matrix, observer_step, step_current,
    step_forces, CurrentState, DisturbanceError, DisturbanceLimits, ForceDisturbanceState,
    ObserverGains, ObserverState,
};
use crate::math;
use crate::psf::{Clock, ObstacleSet, PsfStatus, SafetyFilter};
use crate::sensing::{self, CriWeights, LidarConfig, LidarScan, SensingError, World};
use crate::vessel::{
    max_surge_speed, ControlInput, GeneralizedForce, InputBounds, ModelError, VesselModel,
    VesselState,
};

use path::{path_geometry, PathGeometry};
use reward::{RayTerm, RewardComponents, RewardParams};
use scenario::{Scenario, ScenarioError, ScenarioSpec};

/// Number of navigation features at the head of the observation vector.
pub const NAV_FEATURES: usize = 9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Disturbance(#[from] DisturbanceError),
    #[error("episode is already finished")]
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dt: f64,
    pub max_time: f64,
    pub goal_radius: f64,
    /// Progress fraction that ends the episode.
    pub progress_done: f64,
    pub inputs: InputBounds,
    pub lidar: LidarConfig,
    pub cri: CriWeights,
    pub reward: RewardParams,
    pub observer: ObserverGains,
    /// Disturbance bounds; derived from the actuation limits when absent.
    pub disturbance_limits: Option<DisturbanceLimits>,
    /// Look-ahead distance of the path-curvature feature (m).
    pub lookahead: f64,
    /// Give the filter the true ship states instead of raw detections.
    pub ship_info: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            max_time: 5000.0,
            goal_radius: 5.0,
            progress_done: 0.99,
            inputs: InputBounds::default(),
            lidar: LidarConfig::default(),
            cri: CriWeights::default(),
            reward: RewardParams::default(),
            observer: ObserverGains::default(),
            disturbance_limits: None,
            lookahead: 50.0,
            ship_info: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EnvError::InvalidConfig("dt must be positive"));
        }
        if !(self.max_time > 0.0) {
            return Err(EnvError::InvalidConfig("max time must be positive"));
        }
        if !(self.goal_radius >= 0.0) {
            return Err(EnvError::InvalidConfig("goal radius must be non-negative"));
        }
        if !(self.progress_done > 0.0 && self.progress_done <= 1.0) {
            return Err(EnvError::InvalidConfig("progress threshold must lie in (0, 1]"));
        }
        if !(self.lookahead >= 0.0) {
            return Err(EnvError::InvalidConfig("look-ahead must be non-negative"));
        }
        self.inputs.validate()?;
        self.lidar.validate()?;
        self.cri.validate()?;
        self.reward.validate().map_err(EnvError::InvalidConfig)?;
        if let Some(l) = &self.disturbance_limits {
            l.validate()?;
        }
        Ok(())
    }

    pub fn observation_len(&self, disturbances: bool) -> usize {
        NAV_FEATURES + 2 * self.lidar.n_sectors + if disturbances { 3 } else { 0 }
    }

    /// Names of the observation entries, in order.
    pub fn observation_layout(&self, disturbances: bool) -> Vec<String> {
        let mut names: Vec<String> = [
            "surge",
            "sway",
            "yaw_rate",
            "cross_track",
            "course_error",
            "goal_distance",
            "goal_bearing",
            "progress",
            "lookahead_course_error",
        ]
        .iter()
        .map(|s| String::from(*s))
        .collect();
        for i in 0..self.lidar.n_sectors {
            names.push(alloc::format!("sector_distance_{i}"));
        }
        for i in 0..self.lidar.n_sectors {
            names.push(alloc::format!("sector_cri_{i}"));
        }
        if disturbances {
            names.extend(["tau_hat_x", "tau_hat_y", "tau_hat_n"].iter().map(|s| String::from(*s)));
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoneReason {
    GoalReached,
    Progress,
    Timeout,
    Collision,
    /// The integrator produced a non-finite state.
    Diverged,
}

impl DoneReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::GoalReached => "goal-reached",
            Self::Progress => "progress",
            Self::Timeout => "timeout",
            Self::Collision => "collision",
            Self::Diverged => "diverged",
        }
    }
}

/// Time score: 1 at the fastest possible traversal, 0 at the time limit.
pub fn time_score(elapsed: f64, path_length: f64, speed_max: f64, max_time: f64) -> f64 {
    let t_min = path_length / speed_max;
    if max_time <= t_min {
        return if elapsed <= t_min { 1.0 } else { 0.0 };
    }
    math::clamp((max_time - elapsed) / (max_time - t_min), 0.0, 1.0)
}

/// Everything logged about one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    /// Time at the start of the tick (s).
    pub time: f64,
    /// State at the start of the tick, `[x, y, psi, u, v, r]`.
    pub state: [f64; 6],
    pub proposal: ControlInput,
    pub applied: ControlInput,
    pub delta: ControlInput,
    pub delta_norm: f64,
    pub intervened: bool,
    pub psf_status: Option<PsfStatus>,
    pub solve_time: f64,
    pub slack: f64,
    pub active_constraints: usize,
    pub sqp_iterations: usize,
    pub cross_track: f64,
    pub progress: f64,
    pub clearance: f64,
    pub tau_d: [f64; 3],
    pub tau_hat: [f64; 3],
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub collision: bool,
    pub done_reason: Option<DoneReason>,
    pub progress: f64,
    pub time_score: f64,
    pub elapsed: f64,
    pub ticks: usize,
    pub mean_cross_track: f64,
    pub intervention_rate: f64,
    pub mean_solve_time: f64,
    pub max_solve_time: f64,
    pub fallback_ticks: usize,
    pub total_reward: f64,
    pub min_clearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub record: TickRecord,
    pub components: RewardComponents,
    pub done: Option<DoneReason>,
}

/// One episode as an isolated state machine.
#[derive(Debug, Clone)]
pub struct Episode {
    cfg: EnvConfig,
    scenario: Scenario,
    model: VesselModel,
    filter: Option<SafetyFilter>,
    speed_max: f64,
    limits: DisturbanceLimits,
    gain: Matrix3<f64>,
    rng: ChaCha8Rng,
    state: VesselState,
    time: f64,
    tick: usize,
    current: CurrentState,
    forces: ForceDisturbanceState,
    observer: ObserverState,
    world: World,
    scan: LidarScan,
    geometry: PathGeometry,
    progress: f64,
    total_reward: f64,
    done: Option<DoneReason>,
    sum_cross_track: f64,
    interventions: usize,
    filtered_ticks: usize,
    fallback_ticks: usize,
    sum_solve_time: f64,
    max_solve_time: f64,
    min_clearance: f64,
}

/// Course over ground from heading and body velocity; the heading when
/// the vessel is nearly at rest.
fn course(state: &VesselState) -> f64 {
    let (u, v) = (state.vel.u, state.vel.v);
    if math::hypot(u, v) < 1e-3 {
        state.pose.psi
    } else {
        math::wrap_angle(state.pose.psi + math::atan2(v, u))
    }
}

impl Episode {
    /// Starts an episode at rest at the path start, heading along the path.
    /// `seed` drives the disturbance processes only.
    pub fn new(
        scenario: Scenario,
        model: VesselModel,
        filter: Option<SafetyFilter>,
        cfg: EnvConfig,
        seed: u64,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        if let Some(f) = &filter {
            if f.config().inputs != cfg.inputs {
                return Err(EnvError::InvalidConfig("filter and environment input bounds differ"));
            }
            if (f.config().dt - cfg.dt).abs() > 1e-12 {
                return Err(EnvError::InvalidConfig("filter and environment time steps differ"));
            }
        }
        let speed_max = max_surge_speed(&model.params, cfg.inputs.surge_max)?;
        let [fm, tm] = cfg.inputs.magnitude();
        let limits = cfg
            .disturbance_limits
            .unwrap_or_else(|| DisturbanceLimits::scaled(speed_max, fm, tm));
        let gain = observer_gain_matrix(&model.matrices, &cfg.observer)?;
        let start = scenario.path.start();
        let psi = scenario.path.tangent_angle(0.0);
        let state = VesselState::new(start[0], start[1], psi, 0.0, 0.0, 0.0);
        let world = scenario.world_at(0.0);
        let scan = sensing::raycast(&state.pose, &world, &cfg.lidar);
        let geometry = path_geometry(&scenario.path, state.position(), course(&state));
        let zeta = (-gain * state.vel.to_vector()).into();
        let mut ep = Self {
            scenario,
            model,
            filter,
            speed_max,
            limits,
            gain,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            time: 0.0,
            tick: 0,
            current: CurrentState::default(),
            forces: ForceDisturbanceState::default(),
            observer: ObserverState {
                zeta,
                estimate: [0.0; 3],
            },
            min_clearance: world.clearance(start),
            world,
            scan,
            geometry,
            progress: geometry.progress,
            total_reward: 0.0,
            done: None,
            sum_cross_track: 0.0,
            interventions: 0,
            filtered_ticks: 0,
            fallback_ticks: 0,
            sum_solve_time: 0.0,
            max_solve_time: 0.0,
            cfg,
        };
        if let Some(f) = ep.filter.as_mut() {
            f.reset();
        }
        if ep.scenario.disturbances {
            ep.current = CurrentState {
                speed: math::symmetric_uniform(&mut ep.rng, ep.limits.current_speed_max),
                direction: math::symmetric_uniform(&mut ep.rng, ep.limits.current_dir_max),
            };
        }
        ep.done = ep.check_done();
        Ok(ep)
    }

    /// Generates the scenario from `spec.seed` and derives the disturbance
    /// seed from the same stream.
    pub fn from_spec(
        spec: &ScenarioSpec,
        model: VesselModel,
        filter: Option<SafetyFilter>,
        cfg: EnvConfig,
    ) -> Result<Self, EnvError> {
        let speed_max = max_surge_speed(&model.params, cfg.inputs.surge_max)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let scenario = scenario::generate(spec, speed_max, &mut rng)?;
        let seed = rng.gen();
        Self::new(scenario, model, filter, cfg, seed)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &VesselState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn scan(&self) -> &LidarScan {
        &self.scan
    }

    pub fn geometry(&self) -> &PathGeometry {
        &self.geometry
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn speed_max(&self) -> f64 {
        self.speed_max
    }

    pub fn done(&self) -> Option<DoneReason> {
        self.done
    }

    pub fn psf_enabled(&self) -> bool {
        self.filter.is_some()
    }

    pub fn disturbance_estimate(&self) -> [f64; 3] {
        observer_estimate(&self.observer.zeta, &self.state.vel, &self.gain)
    }

    fn goal_distance(&self) -> f64 {
        let g = self.scenario.path.goal();
        math::hypot(g[0] - self.state.pose.x, g[1] - self.state.pose.y)
    }

    fn check_done(&self) -> Option<DoneReason> {
        if !self.state.is_finite() {
            Some(DoneReason::Diverged)
        } else if self.world.clearance(self.state.position()) < 0.0 {
            Some(DoneReason::Collision)
        } else if self.goal_distance() < self.cfg.goal_radius {
            Some(DoneReason::GoalReached)
        } else if self.progress > self.cfg.progress_done {
            Some(DoneReason::Progress)
        } else if self.time >= self.cfg.max_time - 1e-9 {
            Some(DoneReason::Timeout)
        } else {
            None
        }
    }

    /// Observation for the current state.
    pub fn observation(&self) -> Vec<f64> {
        let s = &self.state;
        let g = &self.geometry;
        let goal = self.scenario.path.goal();
        let goal_bearing = math::wrap_angle(
            math::atan2(goal[1] - s.pose.y, goal[0] - s.pose.x) - s.pose.psi,
        );
        let ahead = self.scenario.path.tangent_angle(g.arc_length + self.cfg.lookahead);
        let mut obs = Vec::with_capacity(self.cfg.observation_len(self.scenario.disturbances));
        obs.extend_from_slice(&[
            s.vel.u,
            s.vel.v,
            s.vel.r,
            g.cross_track,
            g.course_error,
            self.goal_distance(),
            goal_bearing,
            self.progress,
            math::wrap_angle(course(s) - ahead),
        ]);
        let range = self.cfg.lidar.range;
        obs.extend(sensing::sector_pool(&self.scan, &self.cfg.lidar).iter().map(|d| d / range));
        obs.extend(sensing::sector_cri(
            &s.pose,
            self.ned_velocity(),
            &self.scan,
            &self.world,
            &self.cfg.lidar,
            &self.cfg.cri,
        ));
        if self.scenario.disturbances {
            obs.extend_from_slice(&self.disturbance_estimate());
        }
        obs
    }

    fn ned_velocity(&self) -> [f64; 2] {
        let (c, s) = (math::cos(self.state.pose.psi), math::sin(self.state.pose.psi));
        let (u, v) = (self.state.vel.u, self.state.vel.v);
        [c * u - s * v, s * u + c * v]
    }

    fn true_disturbance(&self) -> GeneralizedForce {
        if !self.scenario.disturbances {
            return GeneralizedForce::ZERO;
        }
        current_force(&self.model.params, &self.current, self.state.pose.psi) + self.forces.generalized()
    }

    /// Advances one tick with the proposed action.
    pub fn step(&mut self, action: ControlInput, clock: &dyn Clock) -> Result<StepOutcome, EnvError> {
        if self.done.is_some() {
            return Err(EnvError::Finished);
        }
        let dt = self.cfg.dt;
        let start_state = self.state;
        let start_time = self.time;

        if self.scenario.disturbances {
            self.current = step_current(&self.current, &self.limits, &mut self.rng, dt);
            self.forces = step_forces(&self.forces, &self.limits, &mut self.rng, dt);
        }
        let tau_d = self.true_disturbance();
        let tau_hat = self.disturbance_estimate();

        let proposal = if action.is_finite() {
            self.cfg.inputs.clamp(action)
        } else {
            ControlInput::ZERO
        };
        let (applied, psf) = match self.filter.as_mut() {
            Some(filter) => {
                let obstacles = ObstacleSet::from_scan(
                    &self.state.pose,
                    &self.scan,
                    &self.world,
                    &self.cfg.lidar,
                    filter.config().n_col,
                    self.cfg.ship_info,
                );
                let model_force = if self.scenario.disturbances {
                    GeneralizedForce::new(tau_hat[0], tau_hat[1], tau_hat[2])
                } else {
                    GeneralizedForce::ZERO
                };
                let sol = filter.filter(&self.state, proposal, &model_force, &obstacles, clock);
                let threshold = filter.config().intervention_threshold;
                (sol.input, Some((sol, threshold)))
            }
            None => (proposal, None),
        };

        if self.scenario.disturbances {
            self.observer = observer_step(
                &self.observer,
                &self.state.vel,
                applied,
                &self.model.matrices,
                &self.model.params,
                &self.gain,
                dt,
            )
            .unwrap_or(ObserverState {
                zeta: (-self.gain * self.state.vel.to_vector()).into(),
                estimate: [0.0; 3],
            });
        }

        let next = self.model.step(&self.state, applied, &tau_d, dt);
        self.tick += 1;
        self.time = self.tick as f64 * dt;
        self.world = self.scenario.world_at(self.time);
        let diverged = next.is_err();
        if let Ok(next) = next {
            self.state = next;
            self.scan = sensing::raycast(&self.state.pose, &self.world, &self.cfg.lidar);
            self.geometry = path_geometry(&self.scenario.path, self.state.position(), course(&self.state));
            self.progress = self.progress.max(self.geometry.progress);
        }
        let clearance = self.world.clearance(self.state.position());
        self.min_clearance = self.min_clearance.min(clearance);
        let done = if diverged { Some(DoneReason::Diverged) } else { self.check_done() };
        let collision = done == Some(DoneReason::Collision);

        let p = &self.cfg.reward;
        let components = RewardComponents {
            path: reward::reward_path(
                self.state.vel.u,
                self.geometry.course_error,
                self.geometry.cross_track,
                self.speed_max,
                p,
            ),
            colav: reward::reward_colav(self.ray_terms(), p),
            psf: reward::reward_psf(proposal, applied, &self.cfg.inputs, p),
        };
        let reward = reward::reward_total(&components, collision, p);
        self.total_reward += reward;
        self.sum_cross_track += self.geometry.cross_track.abs();

        let delta = proposal - applied;
        let delta_norm = math::hypot(delta.surge, delta.yaw);
        let mut record = TickRecord {
            tick: self.tick - 1,
            time: start_time,
            state: to_array(&start_state),
            proposal,
            applied,
            delta,
            delta_norm,
            intervened: false,
            psf_status: None,
            solve_time: 0.0,
            slack: 0.0,
            active_constraints: 0,
            sqp_iterations: 0,
            cross_track: self.geometry.cross_track,
            progress: self.progress,
            clearance,
            tau_d: [tau_d.x, tau_d.y, tau_d.n],
            tau_hat,
            reward,
        };
        if let Some((sol, threshold)) = psf {
            record.intervened = delta_norm > threshold;
            record.psf_status = Some(sol.status);
            record.solve_time = sol.solve_time;
            record.slack = sol.slack.max();
            record.active_constraints = sol.active_constraints;
            record.sqp_iterations = sol.sqp_iterations;
            self.filtered_ticks += 1;
            self.interventions += record.intervened as usize;
            self.fallback_ticks += (sol.status == PsfStatus::Fallback) as usize;
            self.sum_solve_time += sol.solve_time;
            self.max_solve_time = self.max_solve_time.max(sol.solve_time);
        }
        self.done = done;
        Ok(StepOutcome {
            record,
            components,
            done,
        })
    }

    fn ray_terms(&self) -> impl Iterator<Item = RayTerm> + '_ {
        let psi = self.state.pose.psi;
        let scan = &self.scan;
        (0..scan.ranges.len()).map(move |i| {
            let a = scan.angles[i] + psi;
            let closing_speed = match scan.hits[i] {
                Some(target) => {
                    let v = self.world.target_velocity(target);
                    -(v[0] * math::cos(a) + v[1] * math::sin(a))
                }
                None => 0.0,
            };
            RayTerm {
                angle: scan.angles[i],
                distance: scan.ranges[i],
                closing_speed,
            }
        })
    }

    pub fn metrics(&self) -> Metrics {
        let ticks = self.tick;
        let collision = self.done == Some(DoneReason::Collision);
        let reached = matches!(self.done, Some(DoneReason::GoalReached | DoneReason::Progress));
        let time_score = if reached {
            time_score(self.time, self.scenario.path.length(), self.speed_max, self.cfg.max_time)
        } else {
            0.0
        };
        let per_tick = |x: f64, n: usize| if n > 0 { x / n as f64 } else { 0.0 };
        Metrics {
            collision,
            done_reason: self.done,
            progress: self.progress,
            time_score,
            elapsed: self.time,
            ticks,
            mean_cross_track: per_tick(self.sum_cross_track, ticks),
            intervention_rate: per_tick(self.interventions as f64, self.filtered_ticks),
            mean_solve_time: per_tick(self.sum_solve_time, self.filtered_ticks),
            max_solve_time: self.max_solve_time,
            fallback_ticks: self.fallback_ticks,
            total_reward: self.total_reward,
            min_clearance: self.min_clearance,
        }
    }
}

fn to_array(s: &VesselState) -> [f64; 6] {
    [s.pose.x, s.pose.y, s.pose.psi, s.vel.u, s.vel.v, s.vel.r]
}

/// Replays an observer over logged velocities and applied inputs, giving the
/// estimate at the start of every tick.
pub fn replay_observer(
    model: &VesselModel,
    gains: &ObserverGains,
    records: &[TickRecord],
    dt: f64,
) -> Result<Vec<[f64; 3]>, EnvError> {
    let gain = observer_gain_matrix(&model.matrices, gains)?;
    let mut out = Vec::with_capacity(records.len());
    let Some(first) = records.first() else {
        return Ok(out);
    };
    let v0 = crate::vessel::Velocity::new(first.state[3], first.state[4], first.state[5]);
    let mut obs = ObserverState {
        zeta: (-gain * v0.to_vector()).into(),
        estimate: [0.0; 3],
    };
    for r in records {
        let vel = crate::vessel::Velocity::new(r.state[3], r.state[4], r.state[5]);
        out.push(disturbance::observer_estimate(&obs.zeta, &vel, &gain));
        obs = observer_step(&obs, &vel, r.applied, &model.matrices, &model.params, &gain, dt)?;
    }
    Ok(out)
}
