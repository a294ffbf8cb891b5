#![allow(dead_code)]

use std::collections::BTreeMap;

use keyplan::geometry::Vec2;
use keyplan::scene::{AgentTrack, Lanelet, Passable, Scene, TimedPoint, TravelDirection, DT, FUTURE_LEN, HISTORY_LEN};

/// Straight lanelet from `start` to `end`.
pub fn straight_lanelet(id: &str, start: Vec2, end: Vec2, width: f64) -> Lanelet {
    let normal = (end - start).normalized().perp() * (width / 2.0);
    Lanelet {
        id: id.into(),
        centerline: vec![start, end],
        left_boundary: vec![start + normal, end + normal],
        right_boundary: vec![start - normal, end - normal],
        successors: vec![],
        predecessors: vec![],
        left_neighbor: vec![],
        right_neighbor: vec![],
        direction_attr: TravelDirection::Same,
        passable: Passable::Uncontrolled,
    }
}

/// Track moving at constant velocity whose last observed position is `now`.
pub fn constant_velocity_track(id: &str, now: Vec2, velocity: Vec2) -> AgentTrack {
    let at = |k: i64| now + velocity * (k as f64 * DT);
    AgentTrack {
        id: id.into(),
        history: (0..HISTORY_LEN as i64)
            .map(|k| {
                let step = k - (HISTORY_LEN as i64 - 1);
                TimedPoint { t: step as f64 * DT, pos: at(step) }
            })
            .collect(),
        future_gt: Some((1..=FUTURE_LEN as i64).map(|k| TimedPoint { t: k as f64 * DT, pos: at(k) }).collect()),
    }
}

pub fn scene(lanelets: Vec<Lanelet>, agents: Vec<AgentTrack>) -> Scene {
    let lanelets: BTreeMap<String, Lanelet> = lanelets.into_iter().map(|l| (l.id.clone(), l)).collect();
    Scene { lanelets, agents, meta: None }
}

/// One 200 m lanelet along the x axis, 3.5 m wide.
pub fn single_lane_scene(agents: Vec<AgentTrack>) -> Scene {
    scene(vec![straight_lanelet("L0", Vec2::new(-100.0, 0.0), Vec2::new(100.0, 0.0), 3.5)], agents)
}

/// Rotate by `angle` about the origin, then translate.
pub fn transform_point(p: Vec2, angle: f64, shift: Vec2) -> Vec2 {
    p.rotate(angle) + shift
}

pub fn transform_scene(scene: &Scene, angle: f64, shift: Vec2) -> Scene {
    let f = |p: &Vec2| transform_point(*p, angle, shift);
    let mut out = scene.clone();
    for l in out.lanelets.values_mut() {
        for line in [&mut l.centerline, &mut l.left_boundary, &mut l.right_boundary] {
            *line = line.iter().map(f).collect();
        }
    }
    for a in &mut out.agents {
        for p in a.history.iter_mut().chain(a.future_gt.iter_mut().flatten()) {
            p.pos = f(&p.pos);
        }
    }
    out
}
