//! Agent-centric heterogeneous local graphs.
//!
//! Every non-centre node within the radius sends one directed edge to the
//! centre agent (star topology). Edges are labelled by the quadrant the source
//! falls in relative to the centre's heading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample, wrap_angle, Vec2};
use crate::scene::model::{Passable, Scene, TravelDirection};

/// Spacing of lane nodes along each centerline.
pub const LANE_NODE_SPACING: f64 = 2.0;

/// Quadrant of a source node around the centre heading.
///
/// Bearings are measured counter-clockwise from the heading on half-open
/// intervals: front `[-45°, 45°)`, left `[45°, 135°)`, back `[135°, 225°)`,
/// right `[225°, 315°)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Front,
    Left,
    Back,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Front, Direction::Left, Direction::Back, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Label for a bearing in radians relative to the centre heading.
    pub fn from_bearing(bearing: f64) -> Direction {
        let deg = bearing.to_degrees().rem_euclid(360.0);
        if !(45.0..315.0).contains(&deg) {
            Direction::Front
        } else if deg < 135.0 {
            Direction::Left
        } else if deg < 225.0 {
            Direction::Back
        } else {
            Direction::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Lane,
    Agent,
}

impl NodeType {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            NodeType::Lane => [1.0, 0.0],
            NodeType::Agent => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Lane { lanelet: String, direction_attr: TravelDirection, passable: Passable },
    Agent { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub position: Vec2,
    /// Agent heading, or centerline direction for lane nodes (radians, global).
    pub heading: f64,
}

impl GraphNode {
    pub fn node_type(&self) -> NodeType {
        match self.kind {
            NodeKind::Lane { .. } => NodeType::Lane,
            NodeKind::Agent { .. } => NodeType::Agent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Index into [`HeteroGraph::nodes`].
    pub source: usize,
    pub direction: Direction,
    /// Source position in the centre's heading frame.
    pub relative_position: Vec2,
    /// Source heading minus centre heading, wrapped.
    pub relative_heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub center: usize,
    pub center_position: Vec2,
    pub center_heading: f64,
    pub radius: f64,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
}

impl HeteroGraph {
    pub fn edges_in(&self, d: Direction) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.direction == d)
    }

    pub fn agent_neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Agent { index } => Some(index),
            NodeKind::Lane { .. } => None,
        })
    }
}

/// Build the local graph around one agent's last observed position.
pub fn build_hetero_graph(scene: &Scene, center_agent_id: &str, radius: f64) -> Result<HeteroGraph> {
    let center = scene.agent_index(center_agent_id)?;
    build_hetero_graph_at(scene, center, radius)
}

pub fn build_hetero_graph_at(scene: &Scene, center: usize, radius: f64) -> Result<HeteroGraph> {
    if !(radius > 0.0) {
        return Err(Error::Input(format!("graph radius must be positive, got {radius}")));
    }
    let origin = scene.agents[center].last_position();
    let heading = scene.agent_heading(center);
    let mut nodes = Vec::new();
    for (index, agent) in scene.agents.iter().enumerate() {
        if index == center {
            continue;
        }
        let p = agent.last_position();
        if p.distance(origin) <= radius {
            nodes.push(GraphNode { kind: NodeKind::Agent { index }, position: p, heading: scene.agent_heading(index) });
        }
    }
    for lanelet in scene.lanelets.values() {
        for (p, tangent) in resample(&lanelet.centerline, LANE_NODE_SPACING) {
            if p.distance(origin) <= radius {
                nodes.push(GraphNode {
                    kind: NodeKind::Lane {
                        lanelet: lanelet.id.clone(),
                        direction_attr: lanelet.direction_attr,
                        passable: lanelet.passable,
                    },
                    position: p,
                    heading: tangent.angle(),
                });
            }
        }
    }
    let edges = nodes
        .iter()
        .enumerate()
        .map(|(source, n)| {
            let rel = n.position.to_frame(origin, heading);
            Edge {
                source,
                direction: Direction::from_bearing(rel.angle()),
                relative_position: rel,
                relative_heading: wrap_angle(n.heading - heading),
            }
        })
        .collect();
    Ok(HeteroGraph { center, center_position: origin, center_heading: heading, radius, nodes, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_boundaries_are_half_open() {
        let d = |deg: f64| Direction::from_bearing(deg.to_radians());
        assert_eq!(d(0.0), Direction::Front);
        assert_eq!(d(-45.0), Direction::Front);
        assert_eq!(d(44.999), Direction::Front);
        assert_eq!(d(45.0), Direction::Left);
        assert_eq!(d(134.999), Direction::Left);
        assert_eq!(d(135.0), Direction::Back);
        assert_eq!(d(-135.0), Direction::Right);
        assert_eq!(d(225.0), Direction::Right);
        assert_eq!(d(315.0), Direction::Front);
        assert_eq!(d(-45.001), Direction::Right);
    }

    #[test]
    fn known_bearings() {
        assert_eq!(Direction::from_bearing(30f64.to_radians()), Direction::Front);
        assert_eq!(Direction::from_bearing(100f64.to_radians()), Direction::Left);
        assert_eq!(Direction::from_bearing((-170f64).to_radians()), Direction::Back);
    }
}
