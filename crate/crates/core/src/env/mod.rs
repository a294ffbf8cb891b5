//! Sub-scene reinforcement-learning environment.

mod reward;
mod sim;
mod subscene;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::VehicleLimits;
use crate::scene::DT;

pub use reward::{
    bell, breakdown, collision_reward, goal_reward, smooth_reward, RewardBreakdown, RewardConfig, SmoothForm,
};
pub use sim::{
    motion_features, positional_step, Observation, StepOutcome, SubSceneEnv, TraceRow, LANE_FEATURES, MOTION_FEATURES,
};
pub use subscene::{
    divide_subscenes, ground_truth_goals, initial_state, lanelet_at, Goal, LaneContext, LaneToken, Member, SubScene,
};

/// How an action moves an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    /// Steering and speed increments through the bicycle model.
    #[default]
    Kinematic,
    /// Direct displacement in the vehicle frame, no vehicle model.
    Positional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub dt: f64,
    pub limits: VehicleLimits,
    pub reward: RewardConfig,
    /// Key positions closer than this put two agents in one sub-scene.
    pub interaction_distance: f64,
    /// Spacing of lane tokens along centerlines.
    pub lane_spacing: f64,
    /// Lane tokens farther than this from every start and goal are dropped.
    pub context_radius: f64,
    pub dynamics: Dynamics,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: DT,
            limits: VehicleLimits::default(),
            reward: RewardConfig::default(),
            interaction_distance: 15.0,
            lane_spacing: 4.0,
            context_radius: 40.0,
            dynamics: Dynamics::Kinematic,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if !(self.dt > 0.0) || !(self.lane_spacing > 0.0) || !(self.context_radius > 0.0) {
            return Err(Error::Validation("dt, lane spacing and context radius must be positive".into()));
        }
        if !(self.interaction_distance >= 0.0) {
            return Err(Error::Validation("interaction distance must be nonnegative".into()));
        }
        Ok(())
    }
}
