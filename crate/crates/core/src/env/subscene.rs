use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{project_onto_polyline, resample, Vec2};
use crate::keys::{key_step, KeyPositionSet};
use crate::kinematics::VehicleState;
use crate::scene::{DrivableArea, Scene};

use super::EnvConfig;

/// A key position the agent must reach by a given step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    /// Step index (1-based) at which the goal is due.
    pub step: usize,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub agent_id: String,
    /// Index into the scene's agent list.
    pub agent: usize,
    pub start: VehicleState,
    /// Ordered by step; the last goal's step is the horizon.
    pub goals: Vec<Goal>,
}

impl Member {
    /// First goal not yet due at `step`.
    pub fn current_goal(&self, step: usize) -> &Goal {
        self.goals.iter().find(|g| g.step >= step).unwrap_or_else(|| self.goals.last().expect("goal schedule"))
    }

    pub fn horizon(&self) -> usize {
        self.goals.last().map_or(0, |g| g.step)
    }
}

/// One lane node of the sub-scene context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneToken {
    pub position: Vec2,
    /// +1 same, -1 opposite.
    pub travel: f64,
    /// Signed lateral offset of the left boundary (positive to the left).
    pub left_offset: f64,
    /// Signed lateral offset of the right boundary.
    pub right_offset: f64,
    /// +1 green, 0 uncontrolled, -1 red.
    pub passable: f64,
}

/// Static lane context shared by every observation of a sub-scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneContext {
    /// Reference pose used to express features in a local frame.
    pub origin: Vec2,
    pub heading: f64,
    pub tokens: Vec<LaneToken>,
}

#[derive(Debug, Clone)]
pub struct SubScene {
    pub members: Vec<Member>,
    pub key_lanelets: BTreeSet<String>,
    pub context_lanelets: BTreeSet<String>,
    pub lanes: Arc<LaneContext>,
    pub drivable: Arc<DrivableArea>,
}

/// Lanelet whose polygon contains `p`, preferring the closest centerline.
pub fn lanelet_at(scene: &Scene, drivable: &DrivableArea, p: Vec2) -> Option<String> {
    drivable
        .lanelets_at(p)
        .map(|id| (id, scene.lanelets[id].project(p).distance))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(id, _)| id.to_string())
}

/// Vehicle state at the present, with velocity averaged over the last half second.
pub fn initial_state(scene: &Scene, agent: usize, max_speed: f64) -> VehicleState {
    const WINDOW: usize = 5;
    let track = &scene.agents[agent];
    let n = track.history.len();
    let now = track.history[n - 1].pos;
    let back = track.history[n.saturating_sub(WINDOW + 1)].pos;
    let span = (n - 1).min(WINDOW) as f64 * crate::scene::DT;
    let d = now - back;
    let heading =
        if d.norm() >= crate::scene::STATIONARY_DISPLACEMENT { d.angle() } else { scene.agent_heading(agent) };
    let speed = if span > 0.0 { (d.norm() / span).min(max_speed) } else { 0.0 };
    VehicleState::new(now, heading, speed)
}

struct Footprint {
    current: String,
    keys: BTreeSet<String>,
    context: BTreeSet<String>,
}

fn footprint(scene: &Scene, drivable: &DrivableArea, agent: usize, goals: &[Goal]) -> Result<Footprint> {
    let id = &scene.agents[agent].id;
    let now = scene.agents[agent].last_position();
    let current = lanelet_at(scene, drivable, now)
        .or_else(|| scene.nearest_lanelet(now).map(|(l, _)| l.id.clone()))
        .ok_or_else(|| Error::Validation("scene has no lanelets".into()))?;
    let mut keys = BTreeSet::from([current.clone()]);
    for g in goals {
        let l = lanelet_at(scene, drivable, g.position).ok_or_else(|| {
            Error::Validation(format!(
                "agent {id}: key position ({:.3}, {:.3}) lies outside every lanelet",
                g.position.x, g.position.y
            ))
        })?;
        keys.insert(l);
    }
    let mut context = keys.clone();
    for k in &keys {
        context.extend(scene.lanelets[k].connected().cloned());
    }
    Ok(Footprint { current, keys, context })
}

impl SubScene {
    /// Sub-scene with the given agents and goal schedules.
    pub fn new(
        scene: &Scene,
        drivable: Arc<DrivableArea>,
        schedules: &[(usize, Vec<Goal>)],
        config: &EnvConfig,
    ) -> Result<SubScene> {
        if schedules.is_empty() {
            return Err(Error::Input("sub-scene needs at least one agent".into()));
        }
        let mut members = Vec::with_capacity(schedules.len());
        let mut key_lanelets = BTreeSet::new();
        let mut context_lanelets = BTreeSet::new();
        for (agent, goals) in schedules {
            if goals.is_empty() || goals.windows(2).any(|w| w[1].step <= w[0].step) || goals[0].step == 0 {
                return Err(Error::Input("goal steps must be positive and strictly increasing".into()));
            }
            let fp = footprint(scene, &drivable, *agent, goals)?;
            key_lanelets.extend(fp.keys);
            context_lanelets.extend(fp.context);
            members.push(Member {
                agent_id: scene.agents[*agent].id.clone(),
                agent: *agent,
                start: initial_state(scene, *agent, config.limits.max_speed),
                goals: goals.clone(),
            });
        }
        let lanes = Arc::new(lane_context(scene, &members, &context_lanelets, config));
        Ok(SubScene { members, key_lanelets, context_lanelets, lanes, drivable })
    }

    pub fn member_index(&self, agent_id: &str) -> Option<usize> {
        self.members.iter().position(|m| m.agent_id == agent_id)
    }

    /// Longest goal schedule among the members.
    pub fn horizon(&self) -> usize {
        self.members.iter().map(Member::horizon).max().unwrap_or(0)
    }
}

fn lane_context(scene: &Scene, members: &[Member], lanelets: &BTreeSet<String>, config: &EnvConfig) -> LaneContext {
    let anchors: Vec<Vec2> = members
        .iter()
        .flat_map(|m| std::iter::once(m.start.position()).chain(m.goals.iter().map(|g| g.position)))
        .collect();
    let near = |p: Vec2| anchors.iter().any(|a| a.distance(p) <= config.context_radius);
    let mut tokens = Vec::new();
    for id in lanelets {
        let l = &scene.lanelets[id];
        for (p, tangent) in resample(&l.centerline, config.lane_spacing) {
            if !near(p) {
                continue;
            }
            let normal = tangent.perp();
            let left = project_onto_polyline(p, &l.left_boundary).point - p;
            let right = project_onto_polyline(p, &l.right_boundary).point - p;
            tokens.push(LaneToken {
                position: p,
                travel: l.direction_attr.signed(),
                left_offset: left.dot(normal),
                right_offset: right.dot(normal),
                passable: l.passable.signed(),
            });
        }
    }
    let first = &members[0].start;
    LaneContext { origin: first.position(), heading: first.heading, tokens }
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Group the agents of one mode into independent sub-scenes.
///
/// Two agents interact when their key positions at the same timestamp lie
/// within the interaction distance, or when one currently drives on the
/// other's context lanelets. Sub-scenes are the connected components of that
/// relation, ordered by their first agent.
pub fn divide_subscenes(
    scene: &Scene,
    keys: &KeyPositionSet,
    mode: usize,
    config: &EnvConfig,
) -> Result<Vec<SubScene>> {
    let drivable = Arc::new(scene.drivable_area());
    let steps = keys.key_steps();
    let mut schedules = Vec::with_capacity(keys.agents.len());
    let mut prints = Vec::with_capacity(keys.agents.len());
    for a in &keys.agents {
        let agent = scene.agent_index(&a.agent_id)?;
        let positions = a.modes.get(mode).ok_or_else(|| {
            Error::Input(format!("agent {}: mode {mode} out of range ({} modes)", a.agent_id, a.modes.len()))
        })?;
        let goals: Vec<Goal> = steps.iter().zip(positions).map(|(s, p)| Goal { step: *s, position: *p }).collect();
        prints.push(footprint(scene, &drivable, agent, &goals)?);
        schedules.push((agent, goals));
    }
    let n = schedules.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let near = schedules[i]
                .1
                .iter()
                .zip(&schedules[j].1)
                .any(|(a, b)| a.position.distance(b.position) <= config.interaction_distance);
            let shared =
                prints[i].context.contains(&prints[j].current) || prints[j].context.contains(&prints[i].current);
            if near || shared {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_group = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_group[r] == usize::MAX {
            root_group[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_group[r]].push(i);
    }
    groups
        .into_iter()
        .map(|g| {
            let members: Vec<(usize, Vec<Goal>)> = g.iter().map(|&i| schedules[i].clone()).collect();
            SubScene::new(scene, drivable.clone(), &members, config)
        })
        .collect()
}

/// Goals for a single agent from its ground-truth future at the given steps.
pub fn ground_truth_goals(scene: &Scene, agent: usize, key_timestamps: &[f64]) -> Result<Vec<Goal>> {
    let future = scene.agents[agent]
        .future_gt
        .as_ref()
        .ok_or_else(|| Error::Input(format!("agent {} has no ground-truth future", scene.agents[agent].id)))?;
    key_timestamps
        .iter()
        .map(|t| {
            let step = key_step(*t);
            if step == 0 || step > future.len() {
                return Err(Error::Input(format!("key timestamp {t} lies outside the ground-truth future")));
            }
            Ok(Goal { step, position: future[step - 1].pos })
        })
        .collect()
}
