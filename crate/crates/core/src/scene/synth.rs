//! Procedural scenes for training and testing.
//!
//! Each kind lays out a few lane routes, chops every route into lanelets of
//! roughly [`LANELET_LENGTH`] metres, and places agents that follow a route at
//! constant speed.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{offset_polyline, point_at_arc_length, polyline_length, Vec2};
use crate::scene::model::{
    AgentTrack, Lanelet, Passable, Scene, TimedPoint, TravelDirection, DT, FUTURE_LEN, HISTORY_LEN,
};

pub const LANE_WIDTH: f64 = 3.5;
pub const LANELET_LENGTH: f64 = 40.0;
/// Bound of the uniform noise added to each history coordinate.
pub const HISTORY_NOISE: f64 = 0.02;
pub const MIN_SPEED: f64 = 4.0;
pub const MAX_SPEED: f64 = 12.0;
/// Preferred minimum gap between any two agents over the whole track.
const PREFERRED_GAP: f64 = 4.0;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Straight,
    Curve,
    Merge,
    Intersection,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [SceneKind::Straight, SceneKind::Curve, SceneKind::Merge, SceneKind::Intersection];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Straight => "straight",
            SceneKind::Curve => "curve",
            SceneKind::Merge => "merge",
            SceneKind::Intersection => "intersection",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        SceneKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Input(format!("unknown scene kind {s:?} (expected straight, curve, merge or intersection)"))
        })
    }
}

/// One drivable path through the map, made of consecutive lanelets.
struct Route {
    line: Vec<Vec2>,
    lanelets: Vec<String>,
}

struct MapBuilder {
    lanelets: BTreeMap<String, Lanelet>,
    routes: Vec<Route>,
}

impl MapBuilder {
    fn new() -> Self {
        Self { lanelets: BTreeMap::new(), routes: Vec::new() }
    }

    /// Chop `line` into `pieces` lanelets named `{name}{i}` and link them in sequence.
    fn lane(
        &mut self,
        name: &str,
        line: &[Vec2],
        pieces: usize,
        direction: TravelDirection,
        passable: Passable,
    ) -> Vec<String> {
        let total = polyline_length(line);
        let ids: Vec<String> = (0..pieces).map(|i| format!("{name}{i}")).collect();
        for (i, id) in ids.iter().enumerate() {
            let a = total * i as f64 / pieces as f64;
            let b = total * (i + 1) as f64 / pieces as f64;
            let centerline = sub_polyline(line, a, b);
            let lanelet = Lanelet {
                id: id.clone(),
                left_boundary: offset_polyline(&centerline, LANE_WIDTH / 2.0),
                right_boundary: offset_polyline(&centerline, -LANE_WIDTH / 2.0),
                centerline,
                successors: ids.get(i + 1).cloned().into_iter().collect(),
                predecessors: if i > 0 { vec![ids[i - 1].clone()] } else { Vec::new() },
                left_neighbor: Vec::new(),
                right_neighbor: Vec::new(),
                direction_attr: direction,
                passable,
            };
            self.lanelets.insert(id.clone(), lanelet);
        }
        self.routes.push(Route { line: line.to_vec(), lanelets: ids.clone() });
        ids
    }

    /// Declare `left` as the left neighbour of `right`, piece by piece.
    fn pair(&mut self, right: &[String], left: &[String]) {
        for (r, l) in right.iter().zip(left) {
            self.lanelets.get_mut(r).expect("lanelet").left_neighbor.push(l.clone());
            self.lanelets.get_mut(l).expect("lanelet").right_neighbor.push(r.clone());
        }
    }

    fn link(&mut self, from: &str, to: &str) {
        self.lanelets.get_mut(from).expect("lanelet").successors.push(to.to_string());
        self.lanelets.get_mut(to).expect("lanelet").predecessors.push(from.to_string());
    }
}

/// Portion of `line` between arc lengths `a < b`.
fn sub_polyline(line: &[Vec2], a: f64, b: f64) -> Vec<Vec2> {
    let mut out = vec![point_at_arc_length(line, a).0];
    let mut s = 0.0;
    for w in line.windows(2) {
        s += w[0].distance(w[1]);
        if s > a + 1e-6 && s < b - 1e-6 {
            out.push(w[1]);
        }
    }
    out.push(point_at_arc_length(line, b).0);
    out
}

fn straight(from: Vec2, to: Vec2) -> Vec<Vec2> {
    vec![from, to]
}

fn reversed(line: &[Vec2]) -> Vec<Vec2> {
    line.iter().rev().copied().collect()
}

fn pieces_for(line: &[Vec2]) -> usize {
    ((polyline_length(line) / LANELET_LENGTH).round() as usize).max(1)
}

fn build_straight(b: &mut MapBuilder) {
    let lane0 = straight(Vec2::new(0.0, 0.0), Vec2::new(160.0, 0.0));
    let lane1 = offset_polyline(&lane0, LANE_WIDTH);
    let back = reversed(&offset_polyline(&lane0, -LANE_WIDTH));
    let n = pieces_for(&lane0);
    let r = b.lane("S", &lane0, n, TravelDirection::Same, Passable::Uncontrolled);
    let l = b.lane("T", &lane1, n, TravelDirection::Same, Passable::Uncontrolled);
    b.pair(&r, &l);
    b.lane("O", &back, n, TravelDirection::Opposite, Passable::Uncontrolled);
}

fn build_curve(b: &mut MapBuilder, rng: &mut ChaCha8Rng) {
    let radius = rng.random_range(30.0..60.0);
    let sweep = rng.random_range(PI / 4.0..FRAC_PI_2);
    let mut road = vec![Vec2::new(0.0, 0.0), Vec2::new(40.0, 0.0)];
    let centre = Vec2::new(40.0, radius);
    let steps = (radius * sweep / 2.0).ceil() as usize;
    for i in 1..=steps {
        let phi = sweep * i as f64 / steps as f64;
        road.push(centre + Vec2::new(phi.sin(), -phi.cos()) * radius);
    }
    let end = *road.last().expect("arc");
    road.push(end + Vec2::from_angle(sweep) * 40.0);
    let lane1 = offset_polyline(&road, LANE_WIDTH);
    let back = reversed(&offset_polyline(&road, -LANE_WIDTH));
    let n = pieces_for(&road);
    let r = b.lane("C", &road, n, TravelDirection::Same, Passable::Uncontrolled);
    let l = b.lane("D", &lane1, n, TravelDirection::Same, Passable::Uncontrolled);
    b.pair(&r, &l);
    b.lane("O", &back, n, TravelDirection::Opposite, Passable::Uncontrolled);
}

fn build_merge(b: &mut MapBuilder) {
    let main = straight(Vec2::new(0.0, 0.0), Vec2::new(160.0, 0.0));
    let main_ids = b.lane("M", &main, 4, TravelDirection::Same, Passable::Uncontrolled);
    // Ramp approaches from the lower right and joins the main lane at x = 80.
    let ramp_line = vec![Vec2::new(10.0, -30.0), Vec2::new(50.0, -12.0), Vec2::new(80.0, 0.0)];
    let ramp_ids = b.lane("R", &ramp_line, 2, TravelDirection::Same, Passable::Uncontrolled);
    b.link(ramp_ids.last().expect("ramp"), &main_ids[2]);
    b.routes.pop();
    let mut ramp_route = ramp_line.clone();
    ramp_route.push(Vec2::new(160.0, 0.0));
    let mut ids = ramp_ids;
    ids.extend(main_ids[2..].iter().cloned());
    b.routes.push(Route { line: ramp_route, lanelets: ids });
}

fn build_intersection(b: &mut MapBuilder) {
    let half = LANE_WIDTH / 2.0;
    let east = straight(Vec2::new(-80.0, -half), Vec2::new(80.0, -half));
    let west = straight(Vec2::new(80.0, half), Vec2::new(-80.0, half));
    let north = straight(Vec2::new(half, -80.0), Vec2::new(half, 80.0));
    let south = straight(Vec2::new(-half, 80.0), Vec2::new(-half, -80.0));
    b.lane("E", &east, 4, TravelDirection::Same, Passable::Green);
    b.lane("W", &west, 4, TravelDirection::Opposite, Passable::Green);
    b.lane("N", &north, 4, TravelDirection::Same, Passable::Red);
    b.lane("P", &south, 4, TravelDirection::Opposite, Passable::Red);
}

struct Placement {
    route: usize,
    start: f64,
    speed: f64,
}

/// Noise-free positions along a route at every history and future step.
fn trace(route: &Route, p: &Placement) -> Vec<Vec2> {
    (0..HISTORY_LEN + FUTURE_LEN)
        .map(|k| point_at_arc_length(&route.line, p.start + p.speed * DT * k as f64).0)
        .collect()
}

fn min_gap(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.distance(*q)).fold(f64::INFINITY, f64::min)
}

/// Generate a scene of the given kind. Deterministic for a fixed seed.
///
/// ```
/// use keyplan::scene::{generate_synthetic_scene, SceneKind};
/// let scene = generate_synthetic_scene(SceneKind::Straight, 3, 7);
/// assert_eq!(scene.agents.len(), 3);
/// assert_eq!(scene, generate_synthetic_scene(SceneKind::Straight, 3, 7));
/// ```
pub fn generate_synthetic_scene(kind: SceneKind, n_agents: usize, seed: u64) -> Scene {
    let n_agents = n_agents.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = MapBuilder::new();
    match kind {
        SceneKind::Straight => build_straight(&mut map),
        SceneKind::Curve => build_curve(&mut map, &mut rng),
        SceneKind::Merge => build_merge(&mut map),
        SceneKind::Intersection => build_intersection(&mut map),
    }

    let travel = MAX_SPEED * DT * (HISTORY_LEN + FUTURE_LEN) as f64;
    let mut placed: Vec<(Placement, Vec<Vec2>)> = Vec::new();
    for _ in 0..n_agents {
        let mut best: Option<(f64, Placement, Vec<Vec2>)> = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let route = rng.random_range(0..map.routes.len());
            let length = polyline_length(&map.routes[route].line);
            let start = rng.random_range(0.0..(length - travel).max(1.0));
            let speed = rng.random_range(MIN_SPEED..MAX_SPEED);
            let p = Placement { route, start, speed };
            let path = trace(&map.routes[route], &p);
            let gap = placed.iter().map(|(_, other)| min_gap(&path, other)).fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(g, _, _)| gap > *g) {
                best = Some((gap, p, path));
            }
            if gap >= PREFERRED_GAP {
                break;
            }
        }
        let (_, p, path) = best.expect("at least one attempt");
        placed.push((p, path));
    }

    let agents = placed
        .iter()
        .enumerate()
        .map(|(i, (_, path))| {
            let history = (0..HISTORY_LEN)
                .map(|k| {
                    let noise = Vec2::new(
                        rng.random_range(-HISTORY_NOISE..=HISTORY_NOISE),
                        rng.random_range(-HISTORY_NOISE..=HISTORY_NOISE),
                    );
                    TimedPoint { t: (k as f64 - (HISTORY_LEN - 1) as f64) / 10.0, pos: path[k] + noise }
                })
                .collect();
            let future =
                (0..FUTURE_LEN).map(|j| TimedPoint { t: (j + 1) as f64 / 10.0, pos: path[HISTORY_LEN + j] }).collect();
            AgentTrack { id: format!("A{i}"), history, future_gt: Some(future) }
        })
        .collect();

    let meta = serde_json::json!({
        "generator": { "kind": kind.name(), "n_agents": n_agents, "seed": seed },
        "speeds": placed.iter().map(|(p, _)| p.speed).collect::<Vec<_>>(),
        "routes": placed.iter().map(|(p, _)| map.routes[p.route].lanelets.clone()).collect::<Vec<_>>(),
    });
    Scene { lanelets: map.lanelets, agents, meta: Some(meta) }
}

/// Largest magnitude of the future acceleration in [`generate_speed_change_scene`], m/s².
pub const SPEED_CHANGE_ACCEL: f64 = 1.5;

/// Single agent on the straight map whose future speeds up or slows down.
///
/// The history is at constant speed; the future applies a constant
/// acceleration drawn from `[-2/3, 1] · SPEED_CHANGE_ACCEL`.
pub fn generate_speed_change_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = MapBuilder::new();
    build_straight(&mut map);
    let route = &map.routes[0];
    let speed = rng.random_range(MIN_SPEED..0.5 * (MIN_SPEED + MAX_SPEED));
    let accel = rng.random_range(-SPEED_CHANGE_ACCEL * 2.0 / 3.0..SPEED_CHANGE_ACCEL);
    let start = rng.random_range(0.0..40.0);
    let now = start + speed * DT * (HISTORY_LEN - 1) as f64;
    let history = (0..HISTORY_LEN)
        .map(|k| {
            let noise = Vec2::new(
                rng.random_range(-HISTORY_NOISE..=HISTORY_NOISE),
                rng.random_range(-HISTORY_NOISE..=HISTORY_NOISE),
            );
            let s = start + speed * DT * k as f64;
            TimedPoint {
                t: (k as f64 - (HISTORY_LEN - 1) as f64) / 10.0,
                pos: point_at_arc_length(&route.line, s).0 + noise,
            }
        })
        .collect();
    let future = (1..=FUTURE_LEN)
        .map(|j| {
            let t = j as f64 * DT;
            TimedPoint {
                t: j as f64 / 10.0,
                pos: point_at_arc_length(&route.line, now + speed * t + 0.5 * accel * t * t).0,
            }
        })
        .collect();
    let meta = serde_json::json!({
        "generator": { "kind": "speed-change", "n_agents": 1, "seed": seed },
        "speeds": [speed],
        "acceleration": accel,
        "routes": [route.lanelets.clone()],
    });
    let agents = vec![AgentTrack { id: "A0".into(), history, future_gt: Some(future) }];
    Scene { lanelets: map.lanelets, agents, meta: Some(meta) }
}
