//! Smooth reference path through waypoints.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

/// Spacing of the arc-length table (m).
pub const ARC_RESOLUTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("a path needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {1} coincide")]
    DuplicateWaypoint(usize, usize),
    #[error("waypoint {0} is not finite")]
    NonFinite(usize),
}

/// Centripetal Catmull-Rom curve through the waypoints, stored as a
/// polyline sampled every [`ARC_RESOLUTION`] metres of arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Path {
    waypoints: Vec<[f64; 2]>,
    points: Vec<[f64; 2]>,
    arc: Vec<f64>,
}

impl TryFrom<Vec<[f64; 2]>> for Path {
    type Error = PathError;
    fn try_from(w: Vec<[f64; 2]>) -> Result<Self, PathError> {
        Path::new(w)
    }
}

impl From<Path> for Vec<[f64; 2]> {
    fn from(p: Path) -> Self {
        p.waypoints
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    math::hypot(a[0] - b[0], a[1] - b[1])
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Barry-Goldman evaluation of one centripetal segment between `p[1]` and `p[2]`.
fn catmull_rom(p: [[f64; 2]; 4], s: f64) -> [f64; 2] {
    let knot = |a: [f64; 2], b: [f64; 2]| math::sqrt(dist(a, b)).max(1e-12);
    let t0 = 0.0;
    let t1 = t0 + knot(p[0], p[1]);
    let t2 = t1 + knot(p[1], p[2]);
    let t3 = t2 + knot(p[2], p[3]);
    let t = t1 + (t2 - t1) * s;
    let a1 = lerp(p[0], p[1], (t - t0) / (t1 - t0));
    let a2 = lerp(p[1], p[2], (t - t1) / (t2 - t1));
    let a3 = lerp(p[2], p[3], (t - t2) / (t3 - t2));
    let b1 = lerp(a1, a2, (t - t0) / (t2 - t0));
    let b2 = lerp(a2, a3, (t - t1) / (t3 - t1));
    lerp(b1, b2, (t - t1) / (t2 - t1))
}

impl Path {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Result<Self, PathError> {
        let n = waypoints.len();
        if n < 2 {
            return Err(PathError::TooFewWaypoints(n));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !w[0].is_finite() || !w[1].is_finite() {
                return Err(PathError::NonFinite(i));
            }
            if i > 0 && dist(waypoints[i - 1], *w) < 1e-6 {
                return Err(PathError::DuplicateWaypoint(i - 1, i));
            }
        }
        let ghost_start = lerp(waypoints[1], waypoints[0], 2.0);
        let ghost_end = lerp(waypoints[n - 2], waypoints[n - 1], 2.0);
        let at = |i: isize| -> [f64; 2] {
            if i < 0 {
                ghost_start
            } else if i as usize >= n {
                ghost_end
            } else {
                waypoints[i as usize]
            }
        };

        // Dense sampling first, then resampling at uniform arc length.
        let mut dense = Vec::new();
        let mut dense_arc = Vec::new();
        for seg in 0..n - 1 {
            let i = seg as isize;
            let ctrl = [at(i - 1), at(i), at(i + 1), at(i + 2)];
            let steps = ((dist(ctrl[1], ctrl[2]) / (0.2 * ARC_RESOLUTION)) as usize).max(16);
            let first = if seg == 0 { 0 } else { 1 };
            for k in first..=steps {
                let p = if k == steps { ctrl[2] } else { catmull_rom(ctrl, k as f64 / steps as f64) };
                let s = match dense.last() {
                    Some(prev) => dense_arc[dense_arc.len() - 1] + dist(*prev, p),
                    None => 0.0,
                };
                dense.push(p);
                dense_arc.push(s);
            }
        }
        let total = *dense_arc.last().expect("non-empty");
        let count = math::floor(total / ARC_RESOLUTION) as usize;
        let mut points = Vec::with_capacity(count + 2);
        let mut arc = Vec::with_capacity(count + 2);
        let mut j = 0;
        for k in 0..=count {
            let s = k as f64 * ARC_RESOLUTION;
            while j + 1 < dense.len() - 1 && dense_arc[j + 1] < s {
                j += 1;
            }
            let span = dense_arc[j + 1] - dense_arc[j];
            let f = if span > 0.0 { ((s - dense_arc[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
            points.push(lerp(dense[j], dense[j + 1], f));
            arc.push(s);
        }
        if total - arc[arc.len() - 1] > 1e-9 {
            points.push(dense[dense.len() - 1]);
            arc.push(total);
        }
        Ok(Self {
            waypoints,
            points,
            arc,
        })
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.arc[self.arc.len() - 1]
    }

    pub fn start(&self) -> [f64; 2] {
        self.points[0]
    }

    pub fn goal(&self) -> [f64; 2] {
        self.points[self.points.len() - 1]
    }

    fn segment(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.length());
        let idx = self.arc.partition_point(|a| *a <= s);
        idx.saturating_sub(1).min(self.points.len() - 2)
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let i = self.segment(s);
        let span = self.arc[i + 1] - self.arc[i];
        lerp(self.points[i], self.points[i + 1], ((s - self.arc[i]) / span).clamp(0.0, 1.0))
    }

    /// Direction of the path at arc length `s` (rad, NED).
    pub fn tangent_angle(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        math::atan2(b[1] - a[1], b[0] - a[0])
    }

    /// Closest point on the polyline as `(arc length, point)`.
    pub fn closest(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let mut best = (f64::INFINITY, 0.0, self.points[0]);
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
            let q = lerp(a, b, t);
            let dd = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]);
            if dd < best.0 {
                best = (dd, self.arc[i] + t * (self.arc[i + 1] - self.arc[i]), q);
            }
        }
        (best.1, best.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    /// Signed distance to the path, positive to starboard of the path direction.
    pub cross_track: f64,
    /// Course minus path direction, wrapped.
    pub course_error: f64,
    pub progress: f64,
    pub arc_length: f64,
    pub closest: [f64; 2],
    pub tangent: f64,
}

pub fn path_geometry(path: &Path, position: [f64; 2], course: f64) -> PathGeometry {
    let (s, q) = path.closest(position);
    let tangent = path.tangent_angle(s);
    let (ts, tc) = (math::sin(tangent), math::cos(tangent));
    let dx = position[0] - q[0];
    let dy = position[1] - q[1];
    // Distance to the closest point, signed by the side of the path. Equals
    // the lateral offset except beyond the path ends.
    let side = tc * dy - ts * dx;
    let distance = math::hypot(dx, dy);
    PathGeometry {
        cross_track: if side < 0.0 { -distance } else { distance },
        course_error: math::wrap_angle(course - tangent),
        progress: s / path.length(),
        arc_length: s,
        closest: q,
        tangent,
    }
}
