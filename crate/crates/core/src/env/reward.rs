//! Per-tick reward terms.

use serde::{Deserialize, Serialize};

use crate::math;
use crate::vessel::{ControlInput, InputBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Offset keeping the path reward informative when one factor vanishes.
    pub offset: f64,
    pub cross_track_decay: f64,
    pub bearing_decay: f64,
    pub closing_speed_gain: f64,
    pub distance_decay: f64,
    pub psf_gain: f64,
    /// Blend between path following (1) and collision avoidance (0).
    pub tradeoff: f64,
    pub existence: f64,
    pub collision: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            offset: 0.1,
            cross_track_decay: 0.5,
            bearing_decay: 4.0,
            closing_speed_gain: 0.05,
            distance_decay: 0.05,
            psf_gain: 1.0,
            tradeoff: 0.6,
            existence: -0.05,
            collision: -500.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.tradeoff) {
            return Err("tradeoff must lie in [0, 1]");
        }
        if !(self.collision < 0.0) {
            return Err("collision reward must be negative");
        }
        let rest = [
            self.offset,
            self.cross_track_decay,
            self.bearing_decay,
            self.closing_speed_gain,
            self.distance_decay,
            self.psf_gain,
            self.existence,
        ];
        if rest.iter().any(|v| !v.is_finite()) {
            return Err("reward parameters must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub path: f64,
    pub colav: f64,
    pub psf: f64,
}

/// Path-following reward from surge speed, course error and cross-track error.
pub fn reward_path(surge: f64, course_error: f64, cross_track: f64, speed_max: f64, p: &RewardParams) -> f64 {
    let speed = surge / speed_max * math::cos(course_error) + p.offset;
    let track = math::exp(-p.cross_track_decay * cross_track.abs()) + p.offset;
    speed * track - p.offset * p.offset
}

/// One ray of a scan as seen by the collision-avoidance reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayTerm {
    /// Bearing relative to the heading (rad).
    pub angle: f64,
    pub distance: f64,
    /// Speed at which the hit obstacle moves towards the vessel along the ray.
    pub closing_speed: f64,
}

/// Bearing-weighted average of exponential proximity penalties.
pub fn reward_colav<I: IntoIterator<Item = RayTerm>>(rays: I, p: &RewardParams) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ray in rays {
        let w = 1.0 / (1.0 + p.bearing_decay * ray.angle.abs());
        let exponent = p.closing_speed_gain * ray.closing_speed.max(0.0) - p.distance_decay * ray.distance;
        num += w * math::exp(exponent);
        den += w;
    }
    if den > 0.0 {
        -num / den
    } else {
        0.0
    }
}

/// Penalty on the filter's modification, normalized by the bound magnitudes.
pub fn reward_psf(proposal: ControlInput, applied: ControlInput, bounds: &InputBounds, p: &RewardParams) -> f64 {
    let d = proposal - applied;
    let [fm, tm] = bounds.magnitude();
    -p.psf_gain * (d.surge.abs() / fm + d.yaw.abs() / tm)
}

pub fn reward_total(c: &RewardComponents, collision: bool, p: &RewardParams) -> f64 {
    if collision {
        return p.collision;
    }
    p.tradeoff * c.path + (1.0 - p.tradeoff) * c.colav + c.psf + p.existence
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const UMAX: f64 = 0.6;

    #[test]
    fn path_reward_extremes() {
        let p = RewardParams::default();
        let best = reward_path(UMAX, 0.0, 0.0, UMAX, &p);
        assert!((best - (1.0 + 2.0 * p.offset)).abs() < 1e-12);
        let worst = reward_path(0.0, 0.0, 1e6, UMAX, &p);
        assert!(worst.abs() < 1e-12);
    }

    #[test]
    fn colav_reward_cases() {
        let p = RewardParams {
            distance_decay: 10.0,
            ..RewardParams::default()
        };
        let far = (0..180).map(|i| RayTerm {
            angle: -3.1 + i as f64 * 0.035,
            distance: 150.0,
            closing_speed: 0.0,
        });
        let r = reward_colav(far, &p);
        assert!(r <= 0.0 && r > -1e-12);

        let p = RewardParams::default();
        let mut rays: alloc::vec::Vec<RayTerm> = (0..180)
            .map(|i| RayTerm {
                angle: -3.1 + i as f64 * 0.035,
                distance: 150.0,
                closing_speed: 0.0,
            })
            .collect();
        let base = reward_colav(rays.iter().copied(), &p);
        rays[89].angle = 0.0;
        rays[89].distance = 0.0;
        let ahead = reward_colav(rays.iter().copied(), &p);
        rays[89].distance = 150.0;
        rays[0].distance = 0.0;
        let behind = reward_colav(rays.iter().copied(), &p);
        assert!(ahead < behind && behind < base);
    }

    #[test]
    fn psf_reward_normalization() {
        let p = RewardParams::default();
        let b = InputBounds::default();
        let u = ControlInput::new(1.0, 0.05);
        assert_eq!(reward_psf(u, u, &b, &p), 0.0);
        let full = reward_psf(ControlInput::new(b.surge_max, 0.0), ControlInput::ZERO, &b, &p);
        assert!((full + p.psf_gain).abs() < 1e-12);
        let d1 = reward_psf(ControlInput::new(0.3, 0.01), ControlInput::ZERO, &b, &p);
        let d2 = reward_psf(ControlInput::new(0.6, 0.02), ControlInput::ZERO, &b, &p);
        assert!((d2 - 2.0 * d1).abs() < 1e-12);
    }

    #[test]
    fn total_reward_blend() {
        let c = RewardComponents {
            path: 0.8,
            colav: -0.3,
            psf: -0.1,
        };
        let p = RewardParams::default();
        assert_eq!(reward_total(&c, true, &p), p.collision);
        let only_path = RewardParams { tradeoff: 1.0, ..p };
        assert!((reward_total(&c, false, &only_path) - (0.8 - 0.1 - 0.05)).abs() < 1e-12);
        let only_colav = RewardParams { tradeoff: 0.0, ..p };
        assert!((reward_total(&c, false, &only_colav) - (-0.3 - 0.1 - 0.05)).abs() < 1e-12);
        assert!(RewardParams { tradeoff: 1.5, ..p }.validate().is_err());
        assert!(RewardParams { collision: 1.0, ..p }.validate().is_err());
    }

    proptest! {
        #[test]
        fn path_reward_decreases_with_cross_track(e in 0.0..50.0f64, de in 0.01..10.0f64, u in 0.01..0.6f64) {
            let p = RewardParams::default();
            prop_assert!(reward_path(u, 0.0, e + de, UMAX, &p) < reward_path(u, 0.0, e, UMAX, &p));
            prop_assert!(reward_path(u, 0.0, -(e + de), UMAX, &p) < reward_path(u, 0.0, e, UMAX, &p));
        }

        #[test]
        fn colav_reward_in_unit_interval_without_closing(
            rays in proptest::collection::vec((-3.14..3.14f64, 0.0..150.0f64, -2.0..0.0f64), 1..50)
        ) {
            let p = RewardParams::default();
            let r = reward_colav(rays.iter().map(|&(angle, distance, closing_speed)| RayTerm { angle, distance, closing_speed }), &p);
            prop_assert!((-1.0..=0.0).contains(&r));
        }

        #[test]
        fn psf_reward_non_positive(f in -4.0..4.0f64, t in -0.3..0.3f64, g in -4.0..4.0f64, s in -0.3..0.3f64) {
            let p = RewardParams::default();
            let r = reward_psf(ControlInput::new(f, t), ControlInput::new(g, s), &InputBounds::default(), &p);
            prop_assert!(r <= 0.0);
        }

        #[test]
        fn total_never_below_collision(path in -1.0..2.0f64, colav in -1.0..0.0f64, psf in -2.0..0.0f64, hit: bool) {
            let p = RewardParams::default();
            let c = RewardComponents { path, colav, psf };
            prop_assert!(reward_total(&c, hit, &p) >= p.collision);
        }
    }
}
