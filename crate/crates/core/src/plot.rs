//! Deterministic SVG rendering of scenes, predictions and episode traces.

use std::fmt::Write;

use crate::env::TraceRow;
use crate::eval::PredictionSet;
use crate::geometry::{Aabb, Vec2};
use crate::keys::KeyPositionSet;
use crate::scene::Scene;

const MODE_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PIXELS_PER_METRE: f64 = 6.0;

/// Layers drawn over the map.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlotLayers<'a> {
    pub predictions: Option<&'a PredictionSet>,
    pub keys: Option<&'a KeyPositionSet>,
    pub trace: Option<&'a [TraceRow]>,
    /// Text placed in the SVG metadata element.
    pub metadata: Option<&'a str>,
}

struct Canvas {
    bounds: Aabb,
    body: String,
}

impl Canvas {
    fn map(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.bounds.min.x) * PIXELS_PER_METRE, (self.bounds.max.y - p.y) * PIXELS_PER_METRE)
    }

    fn points(&self, line: &[Vec2]) -> String {
        let mut s = String::new();
        for (i, p) in line.iter().enumerate() {
            let (x, y) = self.map(*p);
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x:.2},{y:.2}");
        }
        s
    }

    fn polyline(&mut self, line: &[Vec2], style: &str) {
        let pts = self.points(line);
        let _ = writeln!(self.body, r#"<polyline points="{pts}" fill="none" {style}/>"#);
    }

    fn polygon(&mut self, line: &[Vec2], style: &str) {
        let pts = self.points(line);
        let _ = writeln!(self.body, r#"<polygon points="{pts}" {style}/>"#);
    }

    fn circle(&mut self, p: Vec2, r: f64, style: &str) {
        let (x, y) = self.map(p);
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" {style}/>"#);
    }
}

pub fn render_svg(scene: &Scene, layers: PlotLayers<'_>) -> String {
    let mut bounds = scene.bounds().unwrap_or(Aabb { min: Vec2::ZERO, max: Vec2::new(1.0, 1.0) });
    for a in &scene.agents {
        for p in &a.history {
            bounds = bounds.union(Aabb { min: p.pos, max: p.pos });
        }
    }
    let bounds = bounds.expanded(5.0);
    let mut c = Canvas { bounds, body: String::new() };
    for l in scene.lanelets.values() {
        c.polygon(&l.polygon().vertices().to_vec(), r##"fill="#e8e8e8" stroke="#9a9a9a" stroke-width="0.5""##);
        c.polyline(&l.centerline, r##"stroke="#c0c0c0" stroke-width="0.5" stroke-dasharray="3,3""##);
    }
    for a in &scene.agents {
        let hist: Vec<Vec2> = a.history.iter().map(|p| p.pos).collect();
        c.polyline(&hist, r##"stroke="#333333" stroke-width="1.5""##);
        c.circle(a.last_position(), 3.0, r##"fill="#333333""##);
        if let Some(gt) = a.future_positions() {
            c.polyline(&gt, r##"stroke="#333333" stroke-width="1" stroke-dasharray="2,2""##);
        }
    }
    if let Some(pred) = layers.predictions {
        for a in &pred.agents {
            for (m, traj) in a.modes.iter().enumerate() {
                let color = MODE_COLORS[m % MODE_COLORS.len()];
                c.polyline(traj, &format!(r#"stroke="{color}" stroke-width="1.2" opacity="0.85""#));
            }
        }
    }
    if let Some(keys) = layers.keys {
        for a in &keys.agents {
            for (m, mode) in a.modes.iter().enumerate() {
                let color = MODE_COLORS[m % MODE_COLORS.len()];
                for p in mode {
                    c.circle(*p, 2.5, &format!(r#"fill="none" stroke="{color}" stroke-width="1""#));
                }
            }
        }
    }
    if let Some(trace) = layers.trace {
        let mut ids: Vec<&str> = trace.iter().map(|r| r.agent_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        for (k, id) in ids.iter().enumerate() {
            let path: Vec<Vec2> = trace.iter().filter(|r| r.agent_id == *id).map(|r| Vec2::new(r.x, r.y)).collect();
            let color = MODE_COLORS[k % MODE_COLORS.len()];
            c.polyline(&path, &format!(r#"stroke="{color}" stroke-width="1.5""#));
        }
    }
    if let Some(text) = layers.metadata {
        let escaped = text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        c.body.insert_str(0, &format!("<metadata>{escaped}</metadata>\n"));
    }
    let w = (bounds.max.x - bounds.min.x) * PIXELS_PER_METRE;
    let h = (bounds.max.y - bounds.min.y) * PIXELS_PER_METRE;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
        c.body
    )
}
