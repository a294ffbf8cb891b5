//! JSON scene files.
//!
//! ```text
//! { "meta": {...}?,
//!   "lanelets": [{ "id", "centerline": [[x,y],...], "left_boundary", "right_boundary",
//!                  "successors", "predecessors", "left_neighbor", "right_neighbor",
//!                  "direction_attr": "same"|"opposite",
//!                  "passable": "green"|"red"|"uncontrolled" }],
//!   "agents": [{ "id", "history": [[t,x,y] x20], "future_gt": [[t,x,y] x30]? }] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::io::{read_text, write_atomic};
use crate::scene::model::{AgentTrack, Lanelet, Passable, Scene, TimedPoint, TravelDirection};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
    lanelets: Vec<LaneletFile>,
    agents: Vec<AgentFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneletFile {
    id: String,
    centerline: Vec<[f64; 2]>,
    left_boundary: Vec<[f64; 2]>,
    right_boundary: Vec<[f64; 2]>,
    #[serde(default)]
    successors: Vec<String>,
    #[serde(default)]
    predecessors: Vec<String>,
    #[serde(default)]
    left_neighbor: Vec<String>,
    #[serde(default)]
    right_neighbor: Vec<String>,
    direction_attr: TravelDirection,
    passable: Passable,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    id: String,
    history: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    future_gt: Option<Vec<[f64; 3]>>,
}

fn points(v: &[[f64; 2]]) -> Vec<Vec2> {
    v.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

fn arrays(v: &[Vec2]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

fn timed(v: &[[f64; 3]]) -> Vec<TimedPoint> {
    v.iter().map(|p| TimedPoint { t: p[0], pos: Vec2::new(p[1], p[2]) }).collect()
}

fn timed_arrays(v: &[TimedPoint]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.t, p.pos.x, p.pos.y]).collect()
}

impl From<SceneFile> for Scene {
    fn from(f: SceneFile) -> Self {
        let lanelets = f
            .lanelets
            .into_iter()
            .map(|l| {
                let lanelet = Lanelet {
                    id: l.id.clone(),
                    centerline: points(&l.centerline),
                    left_boundary: points(&l.left_boundary),
                    right_boundary: points(&l.right_boundary),
                    successors: l.successors,
                    predecessors: l.predecessors,
                    left_neighbor: l.left_neighbor,
                    right_neighbor: l.right_neighbor,
                    direction_attr: l.direction_attr,
                    passable: l.passable,
                };
                (l.id, lanelet)
            })
            .collect();
        let agents = f
            .agents
            .into_iter()
            .map(|a| AgentTrack { id: a.id, history: timed(&a.history), future_gt: a.future_gt.as_deref().map(timed) })
            .collect();
        Scene { lanelets, agents, meta: f.meta }
    }
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        SceneFile {
            meta: s.meta.clone(),
            lanelets: s
                .lanelets
                .values()
                .map(|l| LaneletFile {
                    id: l.id.clone(),
                    centerline: arrays(&l.centerline),
                    left_boundary: arrays(&l.left_boundary),
                    right_boundary: arrays(&l.right_boundary),
                    successors: l.successors.clone(),
                    predecessors: l.predecessors.clone(),
                    left_neighbor: l.left_neighbor.clone(),
                    right_neighbor: l.right_neighbor.clone(),
                    direction_attr: l.direction_attr,
                    passable: l.passable,
                })
                .collect(),
            agents: s
                .agents
                .iter()
                .map(|a| AgentFile {
                    id: a.id.clone(),
                    history: timed_arrays(&a.history),
                    future_gt: a.future_gt.as_deref().map(timed_arrays),
                })
                .collect(),
        }
    }
}

/// Parse and validate a scene from JSON text. `origin` names the source in errors.
pub fn parse_scene(text: &str, origin: &str) -> Result<Scene> {
    let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::json(origin, &e))?;
    let mut ids = std::collections::BTreeSet::new();
    for l in &file.lanelets {
        if !ids.insert(l.id.clone()) {
            return Err(Error::Validation(format!("duplicate lanelet id {}", l.id)));
        }
    }
    let scene = Scene::from(file);
    scene.validate()?;
    Ok(scene)
}

pub fn scene_to_string(scene: &Scene) -> String {
    let mut text = serde_json::to_string_pretty(&SceneFile::from(scene)).expect("scene serialises");
    text.push('\n');
    text
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_scene(&text, &path.display().to_string())
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), scene_to_string(scene).as_bytes())
}
