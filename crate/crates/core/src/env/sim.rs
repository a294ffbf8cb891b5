use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::kinematics::{step as vehicle_step, Action, VehicleState};

use super::reward::{breakdown, collision_reward, goal_reward, smooth_reward, RewardBreakdown};
use super::subscene::{LaneContext, SubScene};
use super::{Dynamics, EnvConfig};

pub const LANE_FEATURES: usize = 6;
pub const MOTION_FEATURES: usize = 10;

/// What one agent sees: the shared lane context plus its own motion state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub lanes: Arc<LaneContext>,
    /// `v, a_long, δ, φ, s_goal, d_goal, t_remain, θ, x, y` with the pose in the global frame.
    pub motion: [f64; MOTION_FEATURES],
}

impl Observation {
    pub fn speed(&self) -> f64 {
        self.motion[0]
    }

    /// Goal in the vehicle frame (longitudinal, lateral).
    pub fn goal_offset(&self) -> Vec2 {
        Vec2::new(self.motion[4], self.motion[5])
    }

    pub fn time_remaining(&self) -> f64 {
        self.motion[6]
    }
}

/// Build the motion features for a state heading towards `goal`.
pub fn motion_features(state: &VehicleState, goal: Vec2, time_remaining: f64) -> [f64; MOTION_FEATURES] {
    let rel = goal.to_frame(state.position(), state.heading);
    [
        state.speed,
        state.accel,
        state.steer,
        state.yaw_rate,
        rel.x,
        rel.y,
        time_remaining,
        state.heading,
        state.x,
        state.y,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Per member; `None` for members that were already done.
    pub rewards: Vec<Option<RewardBreakdown>>,
    /// Per member reward after cooperative mixing; zero for inactive members.
    pub training_rewards: Vec<f64>,
    /// Per member, after this step.
    pub done: Vec<bool>,
    pub all_done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub agent_id: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steer: f64,
    pub r_goal: f64,
    pub r_smooth: f64,
    pub r_collision: f64,
    pub r_total: f64,
}

/// Synchronous multi-agent episode over one sub-scene.
#[derive(Debug, Clone)]
pub struct SubSceneEnv {
    subscene: Arc<SubScene>,
    config: EnvConfig,
    states: Vec<VehicleState>,
    done: Vec<bool>,
    step: usize,
    trace: Vec<TraceRow>,
}

impl SubSceneEnv {
    pub fn new(subscene: Arc<SubScene>, config: EnvConfig) -> Self {
        let states = subscene.members.iter().map(|m| m.start).collect();
        let done = vec![false; subscene.members.len()];
        Self { subscene, config, states, done, step: 0, trace: Vec::new() }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.subscene.clone(), self.config);
    }

    pub fn subscene(&self) -> &Arc<SubScene> {
        &self.subscene
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Number of steps taken so far.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn done(&self) -> &[bool] {
        &self.done
    }

    pub fn is_done(&self) -> bool {
        self.done.iter().all(|d| *d)
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn observe(&self, member: usize) -> Observation {
        let m = &self.subscene.members[member];
        let goal = m.current_goal(self.step + 1);
        let remaining = goal.step.saturating_sub(self.step) as f64 * self.config.dt;
        Observation {
            lanes: self.subscene.lanes.clone(),
            motion: motion_features(&self.states[member], goal.position, remaining),
        }
    }

    pub fn observe_agent(&self, agent_id: &str) -> Result<Observation> {
        let i = self
            .subscene
            .member_index(agent_id)
            .ok_or_else(|| Error::Contract(format!("agent {agent_id} is not a member of this sub-scene")))?;
        Ok(self.observe(i))
    }

    /// Advance every active member with actions keyed by agent id.
    pub fn step_agents(&mut self, actions: &[(String, [f64; 2])]) -> Result<StepOutcome> {
        let mut ordered = vec![None; self.subscene.members.len()];
        for (id, a) in actions {
            let i = self
                .subscene
                .member_index(id)
                .ok_or_else(|| Error::Contract(format!("action for non-member agent {id}")))?;
            ordered[i] = Some(*a);
        }
        let mut dense = Vec::with_capacity(ordered.len());
        for (i, a) in ordered.into_iter().enumerate() {
            match a {
                Some(a) => dense.push(a),
                None if self.done[i] => dense.push([0.0, 0.0]),
                None => {
                    return Err(Error::Contract(format!(
                        "missing action for agent {}",
                        self.subscene.members[i].agent_id
                    )))
                }
            }
        }
        self.step(&dense)
    }

    /// Advance every active member. `actions[i]` belongs to member `i` and is
    /// ignored for members that are already done.
    pub fn step(&mut self, actions: &[[f64; 2]]) -> Result<StepOutcome> {
        let n = self.subscene.members.len();
        if actions.len() != n {
            return Err(Error::Contract(format!("expected {n} actions, got {}", actions.len())));
        }
        if self.is_done() {
            return Err(Error::Contract("episode already finished".into()));
        }
        let active: Vec<bool> = self.done.iter().map(|d| !d).collect();
        let previous = self.states.clone();
        for i in (0..n).filter(|&i| active[i]) {
            self.states[i] = self.advance(&previous[i], actions[i])?;
        }
        let next_step = self.step + 1;
        let reward_cfg = &self.config.reward;
        let mut rewards = vec![None; n];
        for i in (0..n).filter(|&i| active[i]) {
            let m = &self.subscene.members[i];
            let s = &self.states[i];
            let goal = m.current_goal(next_step);
            let r_goal = goal_reward(reward_cfg, s.position(), goal.position, goal.step == next_step);
            let r_smooth = smooth_reward(reward_cfg, s.accel, s.steer - previous[i].steer);
            let nearest = (0..n)
                .filter(|&j| j != i && active[j])
                .map(|j| self.states[j].position().distance(s.position()))
                .fold(f64::INFINITY, f64::min);
            let on_road = self.subscene.drivable.contains(s.position());
            let r_collision = collision_reward(reward_cfg, nearest, on_road);
            let r = breakdown(reward_cfg, r_goal, r_smooth, r_collision);
            if !r.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite reward for agent {}", m.agent_id)));
            }
            rewards[i] = Some(r);
        }
        let totals: Vec<f64> = rewards.iter().flatten().map(|r| r.total).collect();
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        let training_rewards = rewards.iter().map(|r| r.map_or(0.0, |r| reward_cfg.mix(r.total, mean))).collect();
        for i in (0..n).filter(|&i| active[i]) {
            let r = rewards[i].expect("active member has a reward");
            let m = &self.subscene.members[i];
            if next_step >= m.horizon() || r.collision < 0.0 {
                self.done[i] = true;
            }
            let s = &self.states[i];
            self.trace.push(TraceRow {
                step: next_step,
                agent_id: m.agent_id.clone(),
                x: s.x,
                y: s.y,
                heading: s.heading,
                speed: s.speed,
                steer: s.steer,
                r_goal: r.goal,
                r_smooth: r.smooth,
                r_collision: r.collision,
                r_total: r.total,
            });
        }
        self.step = next_step;
        Ok(StepOutcome { rewards, training_rewards, done: self.done.clone(), all_done: self.is_done() })
    }

    fn advance(&self, state: &VehicleState, action: [f64; 2]) -> Result<VehicleState> {
        let limits = &self.config.limits;
        match self.config.dynamics {
            Dynamics::Kinematic => vehicle_step(state, Action::new(action[0], action[1]), self.config.dt, limits),
            Dynamics::Positional => positional_step(state, action, self.config.dt, limits.max_speed),
        }
    }
}

/// Displacement in the vehicle frame, limited to `max_speed · dt`. Heading
/// follows the displacement.
pub fn positional_step(state: &VehicleState, delta: [f64; 2], dt: f64, max_speed: f64) -> Result<VehicleState> {
    if !delta[0].is_finite() || !delta[1].is_finite() {
        return Err(Error::Numeric("non-finite positional action".into()));
    }
    let mut d = Vec2::new(delta[0], delta[1]);
    let limit = max_speed * dt;
    if d.norm() > limit {
        d = d * (limit / d.norm());
    }
    let world = d.rotate(state.heading);
    let heading = if d.norm() > 1e-9 { state.heading + d.angle() } else { state.heading };
    let speed = d.norm() / dt;
    Ok(VehicleState {
        x: state.x + world.x,
        y: state.y + world.y,
        heading,
        speed,
        steer: 0.0,
        accel: (speed - state.speed) / dt,
        yaw_rate: (heading - state.heading) / dt,
    })
}
