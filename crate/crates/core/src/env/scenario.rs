//! Randomized scenario generation.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::path::{Path, PathError};
use crate::math;
use crate::sensing::{MovingShip, StaticObstacle, World};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("could not place {0} after {1} attempts")]
    PlacementFailed(&'static str, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    Custom,
}

impl CaseId {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1" => Some(Self::One),
            "2" => Some(Self::Two),
            "3" => Some(Self::Three),
            "custom" => Some(Self::Custom),
            _ => None,
        }
    }
}

/// Ship moving on a straight line, `position(t) = origin + velocity * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShipTrack {
    pub origin: [f64; 2],
    pub velocity: [f64; 2],
    pub length: f64,
}

impl ShipTrack {
    pub fn position(&self, t: f64) -> [f64; 2] {
        [self.origin[0] + self.velocity[0] * t, self.origin[1] + self.velocity[1] * t]
    }

    pub fn snapshot(&self, t: f64) -> MovingShip {
        MovingShip {
            position: self.position(t),
            velocity: self.velocity,
            heading: math::atan2(self.velocity[1], self.velocity[0]),
            length: self.length,
        }
    }
}

/// Explicit world for custom scenarios.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CustomWorld {
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub statics: Vec<StaticObstacle>,
    #[serde(default)]
    pub ships: Vec<ShipTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub case: CaseId,
    pub n_static: usize,
    pub n_dynamic: usize,
    pub n_waypoints: usize,
    pub path_length: f64,
    pub static_radius_mean: f64,
    pub dynamic_radius_mean: f64,
    pub displacement_std: f64,
    pub disturbances: bool,
    pub seed: u64,
    /// Radius spread as a fraction of the mean.
    pub radius_std_ratio: f64,
    pub min_radius: f64,
    /// No obstacle boundary within this distance of the start.
    pub start_clearance: f64,
    /// No obstacle boundary within this distance of the goal.
    pub goal_clearance: f64,
    /// Ship speed range as fractions of the vessel's top speed.
    pub ship_speed: [f64; 2],
    /// Largest course change between consecutive random waypoints (rad).
    pub max_turn: f64,
    pub custom: Option<CustomWorld>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::case(CaseId::One, 0)
    }
}

impl ScenarioSpec {
    pub fn case(case: CaseId, seed: u64) -> Self {
        let base = Self {
            case,
            n_static: 8,
            n_dynamic: 0,
            n_waypoints: 2,
            path_length: 500.0,
            static_radius_mean: 30.0,
            dynamic_radius_mean: 15.0,
            displacement_std: 100.0,
            disturbances: false,
            seed,
            radius_std_ratio: 0.5,
            min_radius: 5.0,
            start_clearance: 50.0,
            goal_clearance: 25.0,
            ship_speed: [0.2, 1.0],
            max_turn: PI / 3.0,
            custom: None,
        };
        match case {
            CaseId::One | CaseId::Custom => base,
            CaseId::Two => Self {
                n_static: 5,
                n_dynamic: 5,
                static_radius_mean: 25.0,
                ..base
            },
            CaseId::Three => Self {
                n_static: 5,
                n_dynamic: 5,
                static_radius_mean: 25.0,
                disturbances: true,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.case == CaseId::Custom {
            return match &self.custom {
                Some(c) if c.waypoints.len() >= 2 => Ok(()),
                _ => Err(ScenarioError::Invalid("custom case needs at least two waypoints")),
            };
        }
        if self.n_waypoints < 2 {
            return Err(ScenarioError::Invalid("at least two waypoints"));
        }
        let positive = [
            self.path_length,
            self.static_radius_mean,
            self.dynamic_radius_mean,
            self.min_radius,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ScenarioError::Invalid("lengths and radii must be positive"));
        }
        if !(self.displacement_std >= 0.0 && self.radius_std_ratio >= 0.0) {
            return Err(ScenarioError::Invalid("spreads must be non-negative"));
        }
        if !(self.start_clearance >= 0.0 && self.goal_clearance >= 0.0) {
            return Err(ScenarioError::Invalid("clearances must be non-negative"));
        }
        if !(0.0 <= self.ship_speed[0] && self.ship_speed[0] <= self.ship_speed[1]) {
            return Err(ScenarioError::Invalid("ship speed range must satisfy 0 <= lo <= hi"));
        }
        if !(self.max_turn >= 0.0 && self.max_turn <= PI) {
            return Err(ScenarioError::Invalid("max turn must lie in [0, pi]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub path: Path,
    pub statics: Vec<StaticObstacle>,
    pub ships: Vec<ShipTrack>,
    pub disturbances: bool,
}

impl Scenario {
    pub fn world_at(&self, t: f64) -> World {
        World {
            statics: self.statics.clone(),
            ships: self.ships.iter().map(|s| s.snapshot(t)).collect(),
        }
    }
}

const MAX_ATTEMPTS: usize = 10_000;

fn random_path<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Path, ScenarioError> {
    // Random heading walk with unit steps, then scaled to the target length.
    let mut heading = rng.gen_range(-PI..PI);
    let mut pts = Vec::with_capacity(spec.n_waypoints);
    pts.push([0.0, 0.0]);
    for _ in 1..spec.n_waypoints {
        let last: [f64; 2] = pts[pts.len() - 1];
        pts.push([last[0] + math::cos(heading), last[1] + math::sin(heading)]);
        heading += math::symmetric_uniform(rng, spec.max_turn);
    }
    let raw = Path::new(pts.clone())?;
    let scale = spec.path_length / raw.length();
    Ok(Path::new(pts.iter().map(|p| [p[0] * scale, p[1] * scale]).collect())?)
}

fn radius<R: Rng + ?Sized>(mean: f64, spec: &ScenarioSpec, rng: &mut R) -> f64 {
    let r = (mean + spec.radius_std_ratio * mean * math::standard_normal(rng)).abs();
    r.max(spec.min_radius)
}

fn displaced_path_point<R: Rng + ?Sized>(path: &Path, spec: &ScenarioSpec, rng: &mut R) -> [f64; 2] {
    let base = path.point_at(rng.gen_range(0.0..=path.length()));
    [
        base[0] + spec.displacement_std * math::standard_normal(rng),
        base[1] + spec.displacement_std * math::standard_normal(rng),
    ]
}

fn clear_of(p: [f64; 2], r: f64, q: [f64; 2], clearance: f64) -> bool {
    math::hypot(p[0] - q[0], p[1] - q[1]) - r >= clearance
}

/// Builds a scenario from its spec. `speed_max` is the vessel's top speed,
/// which scales ship speeds and the crossing-time window. Deterministic in `rng`.
pub fn generate<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    speed_max: f64,
    rng: &mut R,
) -> Result<Scenario, ScenarioError> {
    spec.validate()?;
    if !(speed_max > 0.0) {
        return Err(ScenarioError::Invalid("top speed must be positive"));
    }
    if let Some(custom) = &spec.custom {
        return Ok(Scenario {
            path: Path::new(custom.waypoints.clone())?,
            statics: custom.statics.clone(),
            ships: custom.ships.clone(),
            disturbances: spec.disturbances,
        });
    }
    let path = random_path(spec, rng)?;
    let (start, goal) = (path.start(), path.goal());

    let mut statics = Vec::with_capacity(spec.n_static);
    for _ in 0..spec.n_static {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let center = displaced_path_point(&path, spec, rng);
            let r = radius(spec.static_radius_mean, spec, rng);
            if clear_of(center, r, start, spec.start_clearance) && clear_of(center, r, goal, spec.goal_clearance) {
                statics.push(StaticObstacle { center, radius: r });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::PlacementFailed("static obstacle", MAX_ATTEMPTS));
        }
    }

    // Ships cross a displaced path point at a random time within the time
    // the vessel needs to traverse the path at top speed.
    let crossing_window = spec.path_length / speed_max;
    let mut ships = Vec::with_capacity(spec.n_dynamic);
    for _ in 0..spec.n_dynamic {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let cross = displaced_path_point(&path, spec, rng);
            let length = radius(spec.dynamic_radius_mean, spec, rng);
            let speed = speed_max * rng.gen_range(spec.ship_speed[0]..=spec.ship_speed[1]);
            let course = rng.gen_range(-PI..PI);
            let t_cross = rng.gen_range(0.0..=crossing_window);
            let velocity = [speed * math::cos(course), speed * math::sin(course)];
            let track = ShipTrack {
                origin: [cross[0] - velocity[0] * t_cross, cross[1] - velocity[1] * t_cross],
                velocity,
                length,
            };
            // Keep the start clear while the vessel gets under way.
            let start_ok = (0..=60).all(|k| clear_of(track.position(k as f64), length, start, spec.start_clearance));
            if start_ok {
                ships.push(track);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::PlacementFailed("ship", MAX_ATTEMPTS));
        }
    }
    Ok(Scenario {
        path,
        statics,
        ships,
        disturbances: spec.disturbances,
    })
}
