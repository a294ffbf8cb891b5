//! Planar geometry: points, polylines and polygons.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Distance below which a point counts as lying on a polygon edge.
pub const ON_EDGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    /// Counter-clockwise rotation by `theta` radians.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Coordinates of `self` in a frame at `origin` whose x axis points along `heading`.
    pub fn to_frame(self, origin: Vec2, heading: f64) -> Vec2 {
        (self - origin).rotate(-heading)
    }

    /// Inverse of [`Vec2::to_frame`].
    pub fn from_frame(self, origin: Vec2, heading: f64) -> Vec2 {
        self.rotate(heading) + origin
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = theta.rem_euclid(two_pi);
    if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Closest point on a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Vec2,
    pub distance: f64,
    /// Arc length from the first vertex to `point`.
    pub arc_length: f64,
    /// Unit direction of the segment containing `point`.
    pub tangent: Vec2,
    /// Positive when the query lies to the left of the polyline.
    pub signed_offset: f64,
}

pub fn project_onto_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

/// Project onto a polyline with at least two vertices.
pub fn project_onto_polyline(p: Vec2, line: &[Vec2]) -> Projection {
    debug_assert!(line.len() >= 2);
    let mut best: Option<Projection> = None;
    let mut s0 = 0.0;
    for w in line.windows(2) {
        let (q, t) = project_onto_segment(p, w[0], w[1]);
        let seg_len = w[0].distance(w[1]);
        let d = p.distance(q);
        if best.is_none_or(|b| d < b.distance) {
            let tangent = (w[1] - w[0]).normalized();
            best = Some(Projection {
                point: q,
                distance: d,
                arc_length: s0 + t * seg_len,
                tangent,
                signed_offset: tangent.cross(p - q).signum() * d,
            });
        }
        s0 += seg_len;
    }
    best.expect("polyline has a segment")
}

pub fn polyline_length(line: &[Vec2]) -> f64 {
    line.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Point and unit tangent at arc length `s`, clamped to the polyline's extent.
pub fn point_at_arc_length(line: &[Vec2], s: f64) -> (Vec2, Vec2) {
    let mut remaining = s.max(0.0);
    for w in line.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if remaining <= len || len == 0.0 && remaining == 0.0 {
            let t = if len > 0.0 { remaining / len } else { 0.0 };
            return (w[0] + seg * t, seg.normalized());
        }
        remaining -= len;
    }
    let n = line.len();
    (line[n - 1], (line[n - 1] - line[n - 2]).normalized())
}

/// Samples at arc lengths `0, spacing, 2·spacing, …` up to the polyline length.
pub fn resample(line: &[Vec2], spacing: f64) -> Vec<(Vec2, Vec2)> {
    let total = polyline_length(line);
    let count = (total / spacing).floor() as usize + 1;
    (0..count).map(|i| point_at_arc_length(line, i as f64 * spacing)).collect()
}

/// Polyline shifted sideways by `offset` (positive = left), using vertex normals
/// averaged over the adjacent segments.
pub fn offset_polyline(line: &[Vec2], offset: f64) -> Vec<Vec2> {
    let n = line.len();
    (0..n)
        .map(|i| {
            let before = if i > 0 { (line[i] - line[i - 1]).normalized() } else { Vec2::ZERO };
            let after = if i + 1 < n { (line[i + 1] - line[i]).normalized() } else { Vec2::ZERO };
            let dir = (before + after).normalized();
            let cos_half = if i > 0 && i + 1 < n { dir.dot(after).max(0.2) } else { 1.0 };
            line[i] + dir.perp() * (offset / cos_half)
        })
        .collect()
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec2>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in iter {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        Some(b)
    }

    pub fn expanded(self, margin: f64) -> Self {
        Aabb { min: self.min - Vec2::new(margin, margin), max: self.max + Vec2::new(margin, margin) }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb {
            min: Vec2::new(self.min.x.min(o.min.x), self.min.y.min(o.min.y)),
            max: Vec2::new(self.max.x.max(o.max.x), self.max.y.max(o.max.y)),
        }
    }
}

/// Closed polygon, boundary included.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vec2>,
    bounds: Aabb,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        let bounds = Aabb::from_points(&vertices).unwrap_or(Aabb { min: Vec2::ZERO, max: Vec2::ZERO });
        Self { vertices, bounds }
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd crossing test; points within [`ON_EDGE_TOLERANCE`] of an edge are inside.
    pub fn contains(&self, p: Vec2) -> bool {
        if self.vertices.len() < 3 || !self.bounds.expanded(ON_EDGE_TOLERANCE).contains(p) {
            return false;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if project_onto_segment(p, a, b).0.distance(p) <= ON_EDGE_TOLERANCE {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}
