//! Built-in SVG plots.
//!
//! Trajectory plots use a fixed 800 x 800 viewport. World coordinates are
//! NED (x north, y east); the world-to-screen map is the affine
//! `sx = PAD + (y - y_min) * scale`, `sy = SIZE - PAD - (x - x_min) * scale`
//! with a single `scale` fitting the padded bounding box, so north points up
//! and east to the right. The map is repeated in each file's header comment.

use std::fmt::Write as _;

use shipsafe_core::env::scenario::Scenario;
use shipsafe_core::env::TickRecord;

use crate::campaign::Aggregate;

const SIZE: f64 = 800.0;
const PAD: f64 = 40.0;

struct Frame {
    x_min: f64,
    y_min: f64,
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = ([f64; 2], f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (p, r) in points {
            x0 = x0.min(p[0] - r);
            x1 = x1.max(p[0] + r);
            y0 = y0.min(p[1] - r);
            y1 = y1.max(p[1] + r);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
        }
        let span = (x1 - x0).max(y1 - y0).max(1e-9);
        let scale = (SIZE - 2.0 * PAD) / span;
        // Centre the shorter extent.
        let x_min = x0 - 0.5 * (span - (x1 - x0));
        let y_min = y0 - 0.5 * (span - (y1 - y0));
        Self { x_min, y_min, scale }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (PAD + (p[1] - self.y_min) * self.scale, SIZE - PAD - (p[0] - self.x_min) * self.scale)
    }

    fn polyline(&self, pts: impl Iterator<Item = [f64; 2]>) -> String {
        let mut s = String::new();
        for p in pts {
            let (x, y) = self.map(p);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_owned()
    }
}

/// Path, obstacles, ship tracks, the vessel trajectory and green markers
/// where the filter modified the proposed action.
pub fn trajectory_plot(scenario: &Scenario, records: &[TickRecord]) -> String {
    let duration = records.last().map_or(0.0, |r| r.time);
    let ship_points = scenario
        .ships
        .iter()
        .flat_map(|s| [(s.position(0.0), s.length), (s.position(duration), s.length)]);
    let frame = Frame::fit(
        scenario
            .path
            .points()
            .iter()
            .map(|p| (*p, 0.0))
            .chain(scenario.statics.iter().map(|o| (o.center, o.radius)))
            .chain(ship_points)
            .chain(records.iter().map(|r| ([r.state[0], r.state[1]], 0.0))),
    );
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(
        s,
        "<!-- world-to-screen: sx = {PAD} + (y - {:.3}) * {:.6}, sy = {SIZE} - {PAD} - (x - {:.3}) * {:.6}; x north, y east -->",
        frame.y_min, frame.scale, frame.x_min, frame.scale
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"#f4f8fb\"/>");
    for o in &scenario.statics {
        let (cx, cy) = frame.map(o.center);
        let _ = writeln!(
            s,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"#9aa5ad\" stroke=\"#5c666d\"/>",
            o.radius * frame.scale
        );
    }
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#3b7dd8\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>",
        frame.polyline(scenario.path.points().iter().step_by(10).copied())
    );
    for ship in &scenario.ships {
        let (x0, y0) = frame.map(ship.position(0.0));
        let (x1, y1) = frame.map(ship.position(duration));
        let _ = writeln!(
            s,
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"#d8833b\" stroke-dasharray=\"2 3\"/>"
        );
        let _ = writeln!(
            s,
            "<circle cx=\"{x1:.2}\" cy=\"{y1:.2}\" r=\"{:.2}\" fill=\"#d8833b\" fill-opacity=\"0.35\" stroke=\"#d8833b\"/>",
            ship.length * frame.scale
        );
    }
    if !records.is_empty() {
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1b2a38\" stroke-width=\"2\"/>",
            frame.polyline(records.iter().map(|r| [r.state[0], r.state[1]]))
        );
    }
    for r in records.iter().filter(|r| r.intervened) {
        let (x, y) = frame.map([r.state[0], r.state[1]]);
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"#2ca02c\"/>");
    }
    for (p, color) in [(scenario.path.start(), "#1b2a38"), (scenario.path.goal(), "#c0392b")] {
        let (x, y) = frame.map(p);
        let _ = writeln!(s, "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{color}\"/>", x - 4.0, y - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Radar chart axes, each mapped to [0, 1] with 1 best.
pub fn radar_axes(a: &Aggregate) -> [(&'static str, f64); 5] {
    [
        ("collision-free", 1.0 - a.collision_rate),
        ("progress", a.mean_progress),
        ("time score", a.mean_time_score),
        ("path adherence", (-a.mean_cross_track / 10.0).exp()),
        ("filter silence", 1.0 - a.intervention_rate),
    ]
}

pub fn radar_chart(a: &Aggregate, title: &str) -> String {
    let axes = radar_axes(a);
    let (cx, cy, radius) = (SIZE / 2.0, SIZE / 2.0 + 20.0, SIZE / 2.0 - 120.0);
    let point = |k: usize, v: f64| {
        let angle = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * k as f64 / axes.len() as f64;
        (cx + radius * v * angle.cos(), cy + radius * v * angle.sin())
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(s, "<!-- path adherence = exp(-mean |cte| / 10 m) -->");
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{cx}\" y=\"40\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"20\">{}</text>",
        escape(title)
    );
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..axes.len()).map(|k| point(k, ring)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, "<polygon points=\"{}\" fill=\"none\" stroke=\"#ccc\"/>", pts.join(" "));
    }
    for (k, (name, value)) in axes.iter().enumerate() {
        let (x, y) = point(k, 1.0);
        let _ = writeln!(s, "<line x1=\"{cx}\" y1=\"{cy}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#ccc\"/>");
        let (lx, ly) = point(k, 1.15);
        let _ = writeln!(
            s,
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{name} ({value:.2})</text>"
        );
    }
    let pts: Vec<String> = axes
        .iter()
        .enumerate()
        .map(|(k, (_, v))| point(k, v.clamp(0.0, 1.0)))
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    let _ = writeln!(
        s,
        "<polygon points=\"{}\" fill=\"#3b7dd8\" fill-opacity=\"0.3\" stroke=\"#3b7dd8\" stroke-width=\"2\"/>",
        pts.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
