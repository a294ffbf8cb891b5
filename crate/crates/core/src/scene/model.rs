use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_onto_polyline, Aabb, Polygon, Projection, Vec2};

/// Observation rate of every track.
pub const DT: f64 = 0.1;
pub const HISTORY_LEN: usize = 20;
pub const FUTURE_LEN: usize = 30;
/// Slack allowed between a track's last position and the map's bounding box.
pub const MAP_BOUNDS_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TravelDirection {
    Same,
    Opposite,
}

impl TravelDirection {
    pub fn signed(self) -> f64 {
        match self {
            TravelDirection::Same => 1.0,
            TravelDirection::Opposite => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Passable {
    Green,
    Red,
    Uncontrolled,
}

impl Passable {
    pub fn signed(self) -> f64 {
        match self {
            Passable::Green => 1.0,
            Passable::Uncontrolled => 0.0,
            Passable::Red => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lanelet {
    pub id: String,
    pub centerline: Vec<Vec2>,
    pub left_boundary: Vec<Vec2>,
    pub right_boundary: Vec<Vec2>,
    pub successors: Vec<String>,
    pub predecessors: Vec<String>,
    pub left_neighbor: Vec<String>,
    pub right_neighbor: Vec<String>,
    pub direction_attr: TravelDirection,
    pub passable: Passable,
}

impl Lanelet {
    /// Left boundary followed by the reversed right boundary.
    pub fn polygon(&self) -> Polygon {
        let mut vertices = self.left_boundary.clone();
        vertices.extend(self.right_boundary.iter().rev());
        Polygon::new(vertices)
    }

    pub fn project(&self, p: Vec2) -> Projection {
        project_onto_polyline(p, &self.centerline)
    }

    /// Ids of every lanelet linked to this one in the map topology.
    pub fn connected(&self) -> impl Iterator<Item = &String> {
        self.successors.iter().chain(&self.predecessors).chain(&self.left_neighbor).chain(&self.right_neighbor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint {
    pub t: f64,
    pub pos: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: String,
    /// 20 states at 10 Hz ending at the present.
    pub history: Vec<TimedPoint>,
    /// 30 states at 10 Hz after the present, when known.
    pub future_gt: Option<Vec<TimedPoint>>,
}

impl AgentTrack {
    pub fn last_position(&self) -> Vec2 {
        self.history.last().map(|p| p.pos).unwrap_or_default()
    }

    /// Last observed displacement.
    pub fn last_displacement(&self) -> Vec2 {
        let n = self.history.len();
        if n < 2 {
            return Vec2::ZERO;
        }
        self.history[n - 1].pos - self.history[n - 2].pos
    }

    pub fn last_speed(&self) -> f64 {
        self.last_displacement().norm() / DT
    }

    pub fn future_positions(&self) -> Option<Vec<Vec2>> {
        self.future_gt.as_ref().map(|f| f.iter().map(|p| p.pos).collect())
    }
}

/// Displacements shorter than this leave the heading to the map.
pub const STATIONARY_DISPLACEMENT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub lanelets: BTreeMap<String, Lanelet>,
    pub agents: Vec<AgentTrack>,
    /// Free-form provenance (generator settings), carried through save/load.
    pub meta: Option<serde_json::Value>,
}

impl Scene {
    pub fn agent_index(&self, id: &str) -> Result<usize> {
        self.agents.iter().position(|a| a.id == id).ok_or_else(|| Error::UnknownAgent(id.to_string()))
    }

    pub fn lanelet(&self, id: &str) -> Option<&Lanelet> {
        self.lanelets.get(id)
    }

    /// Lanelet whose centerline is closest to `p`.
    pub fn nearest_lanelet(&self, p: Vec2) -> Option<(&Lanelet, Projection)> {
        self.lanelets.values().map(|l| (l, l.project(p))).min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
    }

    /// Heading from the last displacement, or the direction of the nearest
    /// lanelet when the agent did not move.
    pub fn agent_heading(&self, index: usize) -> f64 {
        let agent = &self.agents[index];
        let d = agent.last_displacement();
        if d.norm() >= STATIONARY_DISPLACEMENT {
            return d.angle();
        }
        self.nearest_lanelet(agent.last_position()).map(|(_, pr)| pr.tangent.angle()).unwrap_or(0.0)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.lanelets.values().flat_map(|l| l.left_boundary.iter().chain(&l.right_boundary).chain(&l.centerline)).fold(
            None,
            |acc: Option<Aabb>, p| {
                let b = Aabb { min: *p, max: *p };
                Some(acc.map_or(b, |a| a.union(b)))
            },
        )
    }

    pub fn drivable_area(&self) -> DrivableArea {
        DrivableArea::new(self.lanelets.values().map(|l| (l.id.clone(), l.polygon())).collect())
    }

    /// Check every structural invariant of the scene.
    pub fn validate(&self) -> Result<()> {
        for (key, lanelet) in &self.lanelets {
            if key != &lanelet.id {
                return Err(Error::Validation(format!("lanelet keyed {key:?} has id {:?}", lanelet.id)));
            }
            if lanelet.centerline.len() < 2 {
                return Err(Error::Validation(format!("lanelet {key}: centerline needs at least 2 points")));
            }
            if lanelet.centerline.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!("lanelet {key}: repeated centerline point")));
            }
            if lanelet.left_boundary.len() < 2 || lanelet.right_boundary.len() < 2 {
                return Err(Error::Validation(format!("lanelet {key}: boundaries need at least 2 points")));
            }
            let all_points = lanelet.centerline.iter().chain(&lanelet.left_boundary).chain(&lanelet.right_boundary);
            if all_points.into_iter().any(|p| !p.is_finite()) {
                return Err(Error::Validation(format!("lanelet {key}: non-finite coordinate")));
            }
            for other in lanelet.connected() {
                if !self.lanelets.contains_key(other) {
                    return Err(Error::Validation(format!("lanelet {key} references missing lanelet {other}")));
                }
            }
        }
        let bounds = self.bounds().map(|b| b.expanded(MAP_BOUNDS_MARGIN));
        for agent in &self.agents {
            validate_track(&agent.id, "history", &agent.history, HISTORY_LEN)?;
            if let Some(f) = &agent.future_gt {
                validate_track(&agent.id, "future_gt", f, FUTURE_LEN)?;
            }
            if let Some(b) = bounds {
                if !b.contains(agent.last_position()) {
                    return Err(Error::Validation(format!("agent {}: last position lies outside the map", agent.id)));
                }
            }
        }
        Ok(())
    }
}

fn validate_track(id: &str, what: &str, pts: &[TimedPoint], len: usize) -> Result<()> {
    if pts.len() != len {
        return Err(Error::Validation(format!("agent {id}: {what} has {} states, expected {len}", pts.len())));
    }
    if pts.iter().any(|p| !p.t.is_finite() || !p.pos.is_finite()) {
        return Err(Error::Validation(format!("agent {id}: non-finite {what} state")));
    }
    for w in pts.windows(2) {
        if ((w[1].t - w[0].t) - DT).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "agent {id}: {what} timestamps must advance by {DT} s (found {} -> {})",
                w[0].t, w[1].t
            )));
        }
    }
    Ok(())
}

/// Union of lanelet polygons.
#[derive(Debug, Clone)]
pub struct DrivableArea {
    polygons: Vec<(String, Polygon)>,
}

impl DrivableArea {
    pub fn new(polygons: Vec<(String, Polygon)>) -> Self {
        Self { polygons }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.polygons.iter().any(|(_, poly)| poly.contains(p))
    }

    /// Ids of the lanelets whose polygon contains `p`.
    pub fn lanelets_at(&self, p: Vec2) -> impl Iterator<Item = &str> {
        self.polygons.iter().filter(move |(_, poly)| poly.contains(p)).map(|(id, _)| id.as_str())
    }

    pub fn polygons(&self) -> impl Iterator<Item = &Polygon> {
        self.polygons.iter().map(|(_, p)| p)
    }
}
