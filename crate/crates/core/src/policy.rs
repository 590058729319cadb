//! Built-in proposers of control actions.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{self, clamp, symmetric_uniform, wrap_angle};
use crate::vessel::{ControlInput, InputBounds};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("observation has {got} entries, expected at least {need}")]
    ShortObservation { got: usize, need: usize },
    #[error("replay log has no action for tick {0}")]
    Exhausted(usize),
    #[error("external agent: {0}")]
    External(String),
}

pub trait Policy {
    /// Proposes an action for `tick` given the observation vector.
    fn act(&mut self, tick: usize, obs: &[f64]) -> Result<ControlInput, PolicyError>;
}

/// Index of the navigation features in the observation vector.
pub mod features {
    pub const SURGE: usize = 0;
    pub const SWAY: usize = 1;
    pub const YAW_RATE: usize = 2;
    pub const CROSS_TRACK: usize = 3;
    pub const COURSE_ERROR: usize = 4;
    pub const GOAL_DISTANCE: usize = 5;
    pub const GOAL_BEARING: usize = 6;
    pub const PROGRESS: usize = 7;
    pub const LOOKAHEAD_COURSE_ERROR: usize = 8;
    /// First pooled sector distance.
    pub const SECTORS: usize = 9;
}

fn check_len(obs: &[f64], need: usize) -> Result<(), PolicyError> {
    if obs.len() < need {
        return Err(PolicyError::ShortObservation { got: obs.len(), need });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LosGains {
    /// Look-ahead distance along the path (m).
    pub lookahead: f64,
    pub course_p: f64,
    pub yaw_rate_d: f64,
    pub surge_p: f64,
}

impl Default for LosGains {
    fn default() -> Self {
        Self {
            lookahead: 25.0,
            course_p: 0.3,
            yaw_rate_d: 1.0,
            surge_p: 20.0,
        }
    }
}

/// Line-of-sight path follower: PD yaw moment on the course error towards a
/// look-ahead point, P surge force on the speed error.
#[derive(Debug, Clone, PartialEq)]
pub struct LosFollower {
    pub gains: LosGains,
    pub bounds: InputBounds,
    pub speed_max: f64,
}

impl LosFollower {
    pub fn new(gains: LosGains, bounds: InputBounds, speed_max: f64) -> Self {
        Self {
            gains,
            bounds,
            speed_max,
        }
    }

    /// Course correction towards the look-ahead point (rad).
    pub fn course_command(&self, cross_track: f64, course_error: f64) -> f64 {
        wrap_angle(-math::atan(cross_track / self.gains.lookahead) - course_error)
    }
}

impl Policy for LosFollower {
    fn act(&mut self, _tick: usize, obs: &[f64]) -> Result<ControlInput, PolicyError> {
        check_len(obs, features::SECTORS)?;
        let e = self.course_command(obs[features::CROSS_TRACK], obs[features::COURSE_ERROR]);
        let yaw = self.gains.course_p * e - self.gains.yaw_rate_d * obs[features::YAW_RATE];
        let surge = self.gains.surge_p * (self.speed_max - obs[features::SURGE]);
        Ok(self.bounds.clamp(ControlInput::new(surge, yaw)))
    }
}

/// Stress policy: full thrust at the nearest detected obstacle, a bounded
/// random walk when nothing is in range.
#[derive(Debug, Clone)]
pub struct Adversarial {
    pub bounds: InputBounds,
    pub n_sectors: usize,
    pub steer_gain: f64,
    rng: ChaCha8Rng,
    walk: ControlInput,
}

impl Adversarial {
    pub fn new(bounds: InputBounds, n_sectors: usize, seed: u64) -> Self {
        Self {
            bounds,
            n_sectors,
            steer_gain: 1.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            walk: ControlInput::new(bounds.surge_max, 0.0),
        }
    }

    /// Bearing of the centre of sector `s` relative to the heading.
    pub fn sector_bearing(&self, s: usize) -> f64 {
        -PI + 2.0 * PI * (s as f64 + 0.5) / self.n_sectors as f64
    }
}

impl Policy for Adversarial {
    fn act(&mut self, _tick: usize, obs: &[f64]) -> Result<ControlInput, PolicyError> {
        check_len(obs, features::SECTORS + self.n_sectors)?;
        let sectors = &obs[features::SECTORS..features::SECTORS + self.n_sectors];
        let nearest = sectors
            .iter()
            .enumerate()
            .filter(|(_, d)| **d < 1.0)
            .min_by(|a, b| a.1.total_cmp(b.1));
        let [fm, tm] = self.bounds.magnitude();
        let u = match nearest {
            Some((s, _)) => {
                let yaw = self.steer_gain * self.sector_bearing(s) - obs[features::YAW_RATE];
                ControlInput::new(self.bounds.surge_max, yaw)
            }
            None => {
                let surge = self.walk.surge + symmetric_uniform(&mut self.rng, 0.2 * fm);
                let yaw = self.walk.yaw + symmetric_uniform(&mut self.rng, 0.2 * tm);
                ControlInput::new(surge, clamp(yaw, -0.5 * tm, 0.5 * tm))
            }
        };
        let u = self.bounds.clamp(u);
        self.walk = u;
        Ok(u)
    }
}

/// Re-emits a logged action sequence tick for tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    actions: Vec<ControlInput>,
}

impl Replay {
    pub fn new(actions: Vec<ControlInput>) -> Self {
        Self { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl Policy for Replay {
    fn act(&mut self, tick: usize, _obs: &[f64]) -> Result<ControlInput, PolicyError> {
        self.actions.get(tick).copied().ok_or(PolicyError::Exhausted(tick))
    }
}

/// Always proposes the same action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub ControlInput);

impl Policy for Constant {
    fn act(&mut self, _tick: usize, _obs: &[f64]) -> Result<ControlInput, PolicyError> {
        Ok(self.0)
    }
}

impl<P: Policy + ?Sized> Policy for alloc::boxed::Box<P> {
    fn act(&mut self, tick: usize, obs: &[f64]) -> Result<ControlInput, PolicyError> {
        (**self).act(tick, obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::path::Path;
    use crate::env::scenario::Scenario;
    use crate::env::{DoneReason, EnvConfig, Episode};
    use crate::psf::NoClock;
    use crate::vessel::{max_surge_speed, HydroParams, VesselModel};
    use alloc::vec;
    use proptest::prelude::*;

    const UMAX: f64 = 0.578;

    fn obs(u: f64, r: f64, cte: f64, course: f64) -> Vec<f64> {
        let mut o = vec![0.0; 49];
        o[features::SURGE] = u;
        o[features::YAW_RATE] = r;
        o[features::CROSS_TRACK] = cte;
        o[features::COURSE_ERROR] = course;
        for d in &mut o[9..29] {
            *d = 1.0;
        }
        o
    }

    fn los() -> LosFollower {
        LosFollower::new(LosGains::default(), InputBounds::default(), UMAX)
    }

    #[test]
    fn los_on_path_is_quiet() {
        let u = los().act(0, &obs(UMAX, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(u.yaw, 0.0);
        assert!(u.surge.abs() < 1e-12);
    }

    #[test]
    fn los_saturates_on_large_course_error() {
        let b = InputBounds::default();
        let u = los().act(0, &obs(0.3, 0.0, 0.0, PI / 2.0)).unwrap();
        assert_eq!(u.yaw, b.yaw_min);
        let u = los().act(0, &obs(0.3, 0.0, 0.0, -PI / 2.0)).unwrap();
        assert_eq!(u.yaw, b.yaw_max);
    }

    #[test]
    fn los_turns_back_towards_path() {
        // Starboard of the path: turn to port (negative yaw moment).
        assert!(los().act(0, &obs(0.5, 0.0, 20.0, 0.0)).unwrap().yaw < 0.0);
        assert!(los().act(0, &obs(0.5, 0.0, -20.0, 0.0)).unwrap().yaw > 0.0);
    }

    #[test]
    fn los_completes_open_water_path() {
        let model = VesselModel::new(HydroParams::default()).unwrap();
        let speed_max = max_surge_speed(&model.params, 2.0).unwrap();
        let scenario = Scenario {
            path: Path::new(vec![[0.0, 0.0], [200.0, 150.0], [400.0, 100.0]]).unwrap(),
            statics: Vec::new(),
            ships: Vec::new(),
            disturbances: false,
        };
        let mut ep = Episode::new(scenario, model, None, EnvConfig::default(), 0).unwrap();
        let mut policy = LosFollower::new(LosGains::default(), InputBounds::default(), speed_max);
        while ep.done().is_none() {
            let a = policy.act(ep.tick(), &ep.observation()).unwrap();
            ep.step(a, &NoClock).unwrap();
        }
        assert!(matches!(ep.done(), Some(DoneReason::GoalReached | DoneReason::Progress)));
        assert!(ep.progress() > 0.99 || ep.metrics().done_reason == Some(DoneReason::GoalReached));
        assert!(ep.metrics().mean_cross_track < 5.0, "{}", ep.metrics().mean_cross_track);
    }

    #[test]
    fn adversarial_charges_nearest_obstacle() {
        let mut p = Adversarial::new(InputBounds::default(), 20, 1);
        let mut o = obs(0.3, 0.0, 0.0, 0.0);
        o[9 + 10] = 0.2;
        o[9 + 3] = 0.5;
        let u = p.act(0, &o).unwrap();
        assert_eq!(u.surge, 2.0);
        assert!(u.yaw > 0.0 && u.yaw < 0.15 + 1e-12);
        let mut o = obs(0.3, 0.0, 0.0, 0.0);
        o[9 + 2] = 0.2;
        assert_eq!(p.act(1, &o).unwrap().yaw, -0.15);
    }

    #[test]
    fn replay_reemits_and_then_stops() {
        let mut p = Replay::new(vec![ControlInput::new(1.0, 0.1), ControlInput::new(0.5, -0.1)]);
        assert_eq!(p.act(1, &[]).unwrap(), ControlInput::new(0.5, -0.1));
        assert_eq!(p.act(2, &[]), Err(PolicyError::Exhausted(2)));
    }

    proptest! {
        #[test]
        fn outputs_within_bounds(
            u in -1.0..1.5f64, r in -1.0..1.0f64, cte in -500.0..500.0f64, course in -3.2..3.2f64,
            sectors in proptest::collection::vec(0.0..=1.0f64, 20), seed in 0u64..1000,
        ) {
            let b = InputBounds::default();
            let mut o = obs(u, r, cte, course);
            o[9..29].copy_from_slice(&sectors);
            let mut adv = Adversarial::new(b, 20, seed);
            let mut l = los();
            for k in 0..5 {
                for a in [l.act(k, &o).unwrap(), adv.act(k, &o).unwrap()] {
                    prop_assert!(a.is_finite() && b.contains(a));
                }
            }
        }
    }
}
