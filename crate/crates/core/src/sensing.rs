//! Obstacles, simulated LiDAR, detection points and collision risk.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, clamp, wrap_angle};
use crate::vessel::Pose;

/// Smallest range reported when the sensor origin is inside an obstacle.
pub const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("invalid lidar configuration: {0}")]
    InvalidLidar(&'static str),
    #[error("CRI weights must be non-negative and sum to 1 (sum = {0})")]
    InvalidWeights(f64),
    #[error("invalid membership ramp for {0}")]
    InvalidRamp(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticObstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Snapshot of a moving ship. Its hazard region is a disc of radius `length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingShip {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub heading: f64,
    pub length: f64,
}

impl MovingShip {
    pub fn hazard_radius(&self) -> f64 {
        self.length
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct World {
    pub statics: Vec<StaticObstacle>,
    pub ships: Vec<MovingShip>,
}

/// Identifies the obstacle a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitTarget {
    Static(usize),
    Ship(usize),
}

impl World {
    /// Signed clearance from a point to the nearest obstacle boundary
    /// (negative inside an obstacle). `f64::INFINITY` for an empty world.
    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        let statics = self
            .statics
            .iter()
            .map(|o| math::hypot(p[0] - o.center[0], p[1] - o.center[1]) - o.radius);
        let ships = self
            .ships
            .iter()
            .map(|s| math::hypot(p[0] - s.position[0], p[1] - s.position[1]) - s.hazard_radius());
        statics.chain(ships).fold(f64::INFINITY, f64::min)
    }

    /// Velocity of the obstacle hit by a ray (zero for static ones).
    pub fn target_velocity(&self, target: HitTarget) -> [f64; 2] {
        match target {
            HitTarget::Static(_) => [0.0, 0.0],
            HitTarget::Ship(i) => self.ships[i].velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub n_rays: usize,
    pub n_sectors: usize,
    pub range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            n_rays: 180,
            n_sectors: 20,
            range: 150.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), SensingError> {
        if self.n_rays == 0 || self.n_sectors == 0 {
            return Err(SensingError::InvalidLidar("ray and sector counts must be positive"));
        }
        if self.n_rays % self.n_sectors != 0 {
            return Err(SensingError::InvalidLidar("sector count must divide ray count"));
        }
        if !(self.range > 0.0) {
            return Err(SensingError::InvalidLidar("range must be positive"));
        }
        Ok(())
    }

    pub fn rays_per_sector(&self) -> usize {
        self.n_rays / self.n_sectors
    }

    /// Ray angle relative to the heading; ray `n_rays / 2` points straight ahead.
    pub fn ray_angle(&self, i: usize) -> f64 {
        -PI + 2.0 * PI * i as f64 / self.n_rays as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub angles: Vec<f64>,
    pub hits: Vec<Option<HitTarget>>,
}

/// Distance along a unit ray to a circle, `None` if it misses.
/// Returns `Some(MIN_RANGE)` when the origin lies inside the circle.
pub fn ray_circle(origin: [f64; 2], dir: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let f = [origin[0] - center[0], origin[1] - center[1]];
    let c = f[0] * f[0] + f[1] * f[1] - radius * radius;
    if c <= 0.0 {
        return Some(MIN_RANGE);
    }
    let b = f[0] * dir[0] + f[1] * dir[1];
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    // c / (-b + sqrt(disc)) is the near root without cancellation.
    let t = c / (-b + math::sqrt(disc));
    Some(t.max(MIN_RANGE))
}

pub fn raycast(pose: &Pose, world: &World, cfg: &LidarConfig) -> LidarScan {
    let origin = [pose.x, pose.y];
    let reach = |center: [f64; 2], radius: f64| {
        math::hypot(center[0] - origin[0], center[1] - origin[1]) - radius < cfg.range
    };
    let statics: Vec<(HitTarget, [f64; 2], f64)> = world
        .statics
        .iter()
        .enumerate()
        .filter(|(_, o)| reach(o.center, o.radius))
        .map(|(i, o)| (HitTarget::Static(i), o.center, o.radius))
        .collect();
    let ships = world
        .ships
        .iter()
        .enumerate()
        .filter(|(_, s)| reach(s.position, s.hazard_radius()))
        .map(|(i, s)| (HitTarget::Ship(i), s.position, s.hazard_radius()));
    let candidates: Vec<_> = statics.into_iter().chain(ships).collect();

    let mut ranges = Vec::with_capacity(cfg.n_rays);
    let mut angles = Vec::with_capacity(cfg.n_rays);
    let mut hits = Vec::with_capacity(cfg.n_rays);
    for i in 0..cfg.n_rays {
        let theta = cfg.ray_angle(i);
        let a = theta + pose.psi;
        let dir = [math::cos(a), math::sin(a)];
        let mut best = cfg.range;
        let mut hit = None;
        for &(target, center, radius) in &candidates {
            if let Some(t) = ray_circle(origin, dir, center, radius) {
                if t < best {
                    best = t;
                    hit = Some(target);
                }
            }
        }
        ranges.push(best);
        angles.push(theta);
        hits.push(hit);
    }
    LidarScan {
        ranges,
        angles,
        hits,
    }
}

/// Minimum range per sector.
pub fn sector_pool(scan: &LidarScan, cfg: &LidarConfig) -> Vec<f64> {
    scan.ranges
        .chunks(cfg.rays_per_sector())
        .map(|c| c.iter().copied().fold(cfg.range, f64::min))
        .collect()
}

/// Up to `n_col` closest hits per sector, as world-frame points.
pub fn extract_detection_points(
    pose: &Pose,
    scan: &LidarScan,
    cfg: &LidarConfig,
    n_col: usize,
) -> Vec<[f64; 2]> {
    let per = cfg.rays_per_sector();
    let n_col = n_col.min(per);
    let mut points = Vec::new();
    let mut idx: Vec<usize> = Vec::with_capacity(per);
    for s in 0..cfg.n_sectors {
        idx.clear();
        idx.extend((s * per..(s + 1) * per).filter(|&i| scan.ranges[i] < cfg.range));
        idx.sort_by(|&a, &b| scan.ranges[a].total_cmp(&scan.ranges[b]).then(a.cmp(&b)));
        for &i in idx.iter().take(n_col) {
            let d = scan.ranges[i];
            let a = scan.angles[i] + pose.psi;
            points.push([pose.x + d * math::cos(a), pose.y + d * math::sin(a)]);
        }
    }
    points
}

/// Distance and time to the closest point of approach.
pub fn cpa(own_p: [f64; 2], own_v: [f64; 2], target_p: [f64; 2], target_v: [f64; 2]) -> (f64, f64) {
    let dp = [target_p[0] - own_p[0], target_p[1] - own_p[1]];
    let dv = [target_v[0] - own_v[0], target_v[1] - own_v[1]];
    let dv2 = dv[0] * dv[0] + dv[1] * dv[1];
    let mut tcpa = 0.0;
    if dv2 > 0.0 {
        tcpa = -(dp[0] * dv[0] + dp[1] * dv[1]) / dv2;
        if tcpa < 0.0 {
            tcpa = 0.0;
        }
    }
    let dcpa = math::hypot(dp[0] + dv[0] * tcpa, dp[1] + dv[1] * tcpa);
    (dcpa, tcpa)
}

/// Linear ramp between two breakpoints: 1 below `lo`, 0 above `hi` when
/// descending, the mirror image when ascending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub lo: f64,
    pub hi: f64,
}

impl Ramp {
    pub fn descending(&self, z: f64) -> f64 {
        clamp((self.hi - z) / (self.hi - self.lo), 0.0, 1.0)
    }
    pub fn ascending(&self, z: f64) -> f64 {
        clamp((z - self.lo) / (self.hi - self.lo), 0.0, 1.0)
    }
    fn validate(&self, name: &'static str) -> Result<(), SensingError> {
        if !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(SensingError::InvalidRamp(name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriWeights {
    pub cpa: f64,
    pub bearing: f64,
    pub range: f64,
    pub speed: f64,
    pub dcpa_ramp: Ramp,
    pub tcpa_ramp: Ramp,
    pub range_ramp: Ramp,
    pub speed_ramp: Ramp,
}

impl Default for CriWeights {
    fn default() -> Self {
        Self {
            cpa: 0.4,
            bearing: 0.25,
            range: 0.2,
            speed: 0.15,
            dcpa_ramp: Ramp { lo: 20.0, hi: 200.0 },
            tcpa_ramp: Ramp { lo: 60.0, hi: 600.0 },
            range_ramp: Ramp { lo: 20.0, hi: 150.0 },
            speed_ramp: Ramp { lo: 0.0, hi: 1.2 },
        }
    }
}

impl CriWeights {
    pub fn validate(&self) -> Result<(), SensingError> {
        let w = [self.cpa, self.bearing, self.range, self.speed];
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(SensingError::InvalidWeights(sum));
        }
        self.dcpa_ramp.validate("DCPA")?;
        self.tcpa_ramp.validate("TCPA")?;
        self.range_ramp.validate("range")?;
        self.speed_ramp.validate("relative speed")
    }
}

/// Inputs of the collision risk index for one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriInput {
    pub dcpa: f64,
    pub tcpa: f64,
    /// Relative bearing of the target from the own heading (rad).
    pub bearing: f64,
    pub range: f64,
    pub relative_speed: f64,
}

/// Membership values `(DCPA, TCPA, bearing, range, speed)`, each in `[0, 1]`.
pub fn memberships(input: &CriInput, w: &CriWeights) -> [f64; 5] {
    [
        w.dcpa_ramp.descending(input.dcpa),
        w.tcpa_ramp.descending(input.tcpa),
        0.5 * (1.0 + math::cos(wrap_angle(input.bearing))),
        w.range_ramp.descending(input.range),
        w.speed_ramp.ascending(input.relative_speed),
    ]
}

pub fn cri_from_memberships(mu: &[f64; 5], w: &CriWeights) -> f64 {
    let value = w.cpa * math::sqrt(mu[0] * mu[1]) + w.bearing * mu[2] + w.range * mu[3] + w.speed * mu[4];
    clamp(value, 0.0, 1.0)
}

pub fn cri(input: &CriInput, w: &CriWeights) -> f64 {
    cri_from_memberships(&memberships(input, w), w)
}

/// Largest collision risk per sector over the obstacles hit by the sector's rays.
pub fn sector_cri(
    pose: &Pose,
    own_velocity: [f64; 2],
    scan: &LidarScan,
    world: &World,
    cfg: &LidarConfig,
    weights: &CriWeights,
) -> Vec<f64> {
    let per = cfg.rays_per_sector();
    let origin = [pose.x, pose.y];
    (0..cfg.n_sectors)
        .map(|s| {
            let mut best: f64 = 0.0;
            for i in s * per..(s + 1) * per {
                let Some(target) = scan.hits[i] else { continue };
                let d = scan.ranges[i];
                let a = scan.angles[i] + pose.psi;
                let point = [origin[0] + d * math::cos(a), origin[1] + d * math::sin(a)];
                let tv = world.target_velocity(target);
                let (dcpa, tcpa) = cpa(origin, own_velocity, point, tv);
                let input = CriInput {
                    dcpa,
                    tcpa,
                    bearing: scan.angles[i],
                    range: d,
                    relative_speed: math::hypot(tv[0] - own_velocity[0], tv[1] - own_velocity[1]),
                };
                best = best.max(cri(&input, weights));
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ahead_index(cfg: &LidarConfig) -> usize {
        cfg.n_rays / 2
    }

    #[test]
    fn empty_world_reports_full_range() {
        let cfg = LidarConfig::default();
        let scan = raycast(&Pose::default(), &World::default(), &cfg);
        assert_eq!(scan.ranges.len(), 180);
        assert!(scan.ranges.iter().all(|&r| r == 150.0));
        assert!(sector_pool(&scan, &cfg).iter().all(|&r| r == 150.0));
        assert!(extract_detection_points(&Pose::default(), &scan, &cfg, 5).is_empty());
    }

    #[test]
    fn circle_dead_ahead() {
        let cfg = LidarConfig::default();
        assert_eq!(cfg.ray_angle(ahead_index(&cfg)), 0.0);
        let world = World {
            statics: alloc::vec![StaticObstacle {
                center: [50.0, 0.0],
                radius: 10.0
            }],
            ships: Vec::new(),
        };
        let scan = raycast(&Pose::default(), &world, &cfg);
        assert!((scan.ranges[ahead_index(&cfg)] - 40.0).abs() < 1e-12);
        assert_eq!(scan.hits[ahead_index(&cfg)], Some(HitTarget::Static(0)));
        let pts = extract_detection_points(&Pose::default(), &scan, &cfg, 1);
        assert!(pts.iter().any(|p| (p[0] - 40.0).abs() < 1e-9 && p[1].abs() < 1e-9));
    }

    #[test]
    fn inside_obstacle_reports_tiny_positive_range() {
        let cfg = LidarConfig::default();
        let world = World {
            statics: alloc::vec![StaticObstacle {
                center: [1.0, 0.0],
                radius: 10.0
            }],
            ships: Vec::new(),
        };
        let scan = raycast(&Pose::default(), &world, &cfg);
        assert!(scan.ranges.iter().all(|&r| r > 0.0 && r <= MIN_RANGE));
    }

    #[test]
    fn detection_point_arithmetic() {
        let cfg = LidarConfig::default();
        let mut scan = raycast(&Pose::default(), &World::default(), &cfg);
        let i = ahead_index(&cfg);
        scan.ranges[i] = 40.0;
        let pts = extract_detection_points(&Pose::default(), &scan, &cfg, 5);
        assert_eq!(pts.len(), 1);
        assert!((pts[0][0] - 40.0).abs() < 1e-12 && pts[0][1].abs() < 1e-12);

        scan.ranges[i] = 20.0;
        let pose = Pose {
            x: 10.0,
            y: 5.0,
            psi: PI / 2.0,
        };
        let pts = extract_detection_points(&pose, &scan, &cfg, 5);
        assert!((pts[0][0] - 10.0).abs() < 1e-12 && (pts[0][1] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn detection_points_take_closest_per_sector() {
        let cfg = LidarConfig::default();
        let mut scan = raycast(&Pose::default(), &World::default(), &cfg);
        for (k, i) in (0..9).enumerate() {
            scan.ranges[i] = 100.0 - k as f64;
        }
        let pts = extract_detection_points(&Pose::default(), &scan, &cfg, 3);
        assert_eq!(pts.len(), 3);
        let dists: Vec<f64> = pts.iter().map(|p| math::hypot(p[0], p[1])).collect();
        assert!((dists[0] - 92.0).abs() < 1e-9);
        assert!((dists[2] - 94.0).abs() < 1e-9);
    }

    #[test]
    fn sector_pool_cases() {
        let cfg = LidarConfig::default();
        let mut scan = raycast(&Pose::default(), &World::default(), &cfg);
        scan.ranges[3 * 9 + 4] = 30.0;
        let pooled = sector_pool(&scan, &cfg);
        for (s, v) in pooled.iter().enumerate() {
            assert_eq!(*v, if s == 3 { 30.0 } else { 150.0 });
        }
    }

    #[test]
    fn lidar_config_validation() {
        assert!(LidarConfig::default().validate().is_ok());
        let bad = LidarConfig {
            n_sectors: 7,
            ..LidarConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    /// March along each ray in 0.01 m steps until entering an obstacle.
    fn march(origin: [f64; 2], dir: [f64; 2], world: &World, range: f64) -> f64 {
        let inside = |p: [f64; 2]| world.clearance(p) <= 0.0;
        let mut t = 0.0;
        while t < range {
            let p = [origin[0] + t * dir[0], origin[1] + t * dir[1]];
            if inside(p) {
                return t;
            }
            t += 0.01;
        }
        range
    }

    fn random_world(rng: &mut ChaCha8Rng) -> World {
        let statics = (0..rng.gen_range(1..8))
            .map(|_| StaticObstacle {
                center: [rng.gen_range(-140.0..140.0), rng.gen_range(-140.0..140.0)],
                radius: rng.gen_range(3.0..30.0),
            })
            .filter(|o| math::hypot(o.center[0], o.center[1]) > o.radius + 1.0)
            .collect();
        let ships = (0..rng.gen_range(0..4))
            .map(|_| MovingShip {
                position: [rng.gen_range(-140.0..140.0), rng.gen_range(-140.0..140.0)],
                velocity: [0.0, 0.0],
                heading: 0.0,
                length: rng.gen_range(5.0..20.0),
            })
            .filter(|s| math::hypot(s.position[0], s.position[1]) > s.length + 1.0)
            .collect();
        World { statics, ships }
    }

    #[test]
    fn raycast_matches_ray_march_and_points_lie_on_boundaries() {
        let cfg = LidarConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let world = random_world(&mut rng);
            let pose = Pose {
                x: 0.0,
                y: 0.0,
                psi: rng.gen_range(-PI..PI),
            };
            let scan = raycast(&pose, &world, &cfg);
            for i in 0..cfg.n_rays {
                let a = scan.angles[i] + pose.psi;
                let oracle = march([0.0, 0.0], [math::cos(a), math::sin(a)], &world, cfg.range);
                assert!((scan.ranges[i] - oracle).abs() <= 0.02, "ray {i}");
            }
            for p in extract_detection_points(&pose, &scan, &cfg, 5) {
                assert!(world.clearance(p).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn cpa_cases() {
        let (d, t) = cpa([0.0, 0.0], [1.0, 1.0], [3.0, 4.0], [1.0, 1.0]);
        assert_eq!(t, 0.0);
        assert!((d - 5.0).abs() < 1e-12);
        let (d, t) = cpa([0.0, 0.0], [0.0, 0.0], [100.0, 0.0], [-10.0, 0.0]);
        assert!((t - 10.0).abs() < 1e-12 && d.abs() < 1e-12);
        // Diverging target: closest approach is now.
        let (d, t) = cpa([0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [1.0, 0.0]);
        assert_eq!(t, 0.0);
        assert!((d - 10.0).abs() < 1e-12);
    }

    #[test]
    fn cri_extremes() {
        let w = CriWeights::default();
        w.validate().unwrap();
        assert_eq!(cri_from_memberships(&[0.0; 5], &w), 0.0);
        assert!((cri_from_memberships(&[1.0; 5], &w) - 1.0).abs() < 1e-12);
        let bad = CriWeights { cpa: 0.5, ..w };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn dcpa_matches_time_grid(
            px in -100.0..100.0f64, py in -100.0..100.0f64,
            vx in -3.0..3.0f64, vy in -3.0..3.0f64,
        ) {
            let (d, _) = cpa([0.0, 0.0], [0.0, 0.0], [px, py], [vx, vy]);
            let mut best = f64::INFINITY;
            for k in 0..=200_000 {
                let t = k as f64 * 0.005;
                best = best.min(math::hypot(px + vx * t, py + vy * t));
            }
            // The grid covers 1000 s; every sampled case closes within it.
            prop_assert!(d <= best + 1e-9);
            prop_assert!(best - d <= 0.02);
        }

        #[test]
        fn cri_is_bounded_and_monotone_in_range(
            dcpa in 0.0..300.0f64, tcpa in 0.0..900.0f64, bearing in -4.0..4.0f64,
            r in 0.0..200.0f64, dr in 0.0..50.0f64, v in 0.0..3.0f64,
        ) {
            let w = CriWeights::default();
            let far = CriInput { dcpa, tcpa, bearing, range: r + dr, relative_speed: v };
            let near = CriInput { range: r, ..far };
            for m in memberships(&far, &w) {
                prop_assert!((0.0..=1.0).contains(&m));
            }
            let (a, b) = (cri(&far, &w), cri(&near, &w));
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a);
        }

        #[test]
        fn pooling_is_min_and_permutation_invariant(values in proptest::collection::vec(0.1..150.0f64, 180), seed in 0u64..1000) {
            let cfg = LidarConfig::default();
            let scan = LidarScan { angles: (0..180).map(|i| cfg.ray_angle(i)).collect(), hits: alloc::vec![None; 180], ranges: values.clone() };
            let pooled = sector_pool(&scan, &cfg);
            let mut shuffled = values.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for chunk in shuffled.chunks_mut(9) {
                for i in (1..chunk.len()).rev() {
                    chunk.swap(i, rng.gen_range(0..=i));
                }
            }
            let pooled2 = sector_pool(&LidarScan { ranges: shuffled, ..scan.clone() }, &cfg);
            prop_assert_eq!(&pooled, &pooled2);
            for (s, p) in pooled.iter().enumerate() {
                prop_assert!(values[s * 9..(s + 1) * 9].iter().all(|v| p <= v));
            }
        }
    }
}
