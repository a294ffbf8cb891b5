//! Maps, agent tracks, local graphs and scene files.

mod graph;
mod io;
mod model;
mod synth;

pub use graph::{
    build_hetero_graph, build_hetero_graph_at, Direction, Edge, GraphNode, HeteroGraph, NodeKind, NodeType,
    LANE_NODE_SPACING,
};
pub use io::{load_scene, parse_scene, save_scene, scene_to_string};
pub use model::{
    AgentTrack, DrivableArea, Lanelet, Passable, Scene, TimedPoint, TravelDirection, DT, FUTURE_LEN, HISTORY_LEN,
    MAP_BOUNDS_MARGIN, STATIONARY_DISPLACEMENT,
};
pub use synth::{
    generate_speed_change_scene, generate_synthetic_scene, SceneKind, HISTORY_NOISE, LANE_WIDTH, MAX_SPEED, MIN_SPEED,
    SPEED_CHANGE_ACCEL,
};
