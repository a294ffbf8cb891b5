use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// How acceleration and steering increments are penalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothForm {
    /// `g(x) - 1`: zero at rest, approaching -1 for large magnitudes.
    #[default]
    Shifted,
    /// `-g(x)`: the unshifted negative bell.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub goal_weight: f64,
    pub smooth_weight: f64,
    pub collision_weight: f64,
    /// Width of the goal bell, metres.
    pub goal_sigma: f64,
    /// Width of the acceleration bell, m/s².
    pub accel_sigma: f64,
    /// Width of the steering-increment bell, radians.
    pub steer_sigma: f64,
    /// Goal reward multiplier on a goal's deadline step.
    pub deadline_multiplier: f64,
    /// Centre-to-centre distance below which two agents collide.
    pub collision_distance: f64,
    /// Share of the member-average reward mixed into each agent's reward.
    pub cooperation: f64,
    pub smooth_form: SmoothForm,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            goal_weight: 0.6,
            smooth_weight: 0.1,
            collision_weight: 0.5,
            goal_sigma: 1.0,
            accel_sigma: 2.0,
            steer_sigma: 0.02,
            deadline_multiplier: 5.0,
            collision_distance: 2.0,
            cooperation: 0.25,
            smooth_form: SmoothForm::Shifted,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.goal_weight, self.smooth_weight, self.collision_weight];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Validation("reward weights must be nonnegative".into()));
        }
        if [self.goal_sigma, self.accel_sigma, self.steer_sigma].iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Validation("reward widths must be positive".into()));
        }
        if !(self.deadline_multiplier > 1.0) {
            return Err(Error::Validation("deadline multiplier must exceed 1".into()));
        }
        if !(0.0..1.0).contains(&self.cooperation) {
            return Err(Error::Validation("cooperation share must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Weighted total of the three components.
    pub fn total(&self, goal: f64, smooth: f64, collision: f64) -> f64 {
        self.goal_weight * goal + self.smooth_weight * smooth + self.collision_weight * collision
    }

    /// Blend an agent's own reward with the average over the agents that acted this step.
    pub fn mix(&self, own: f64, member_mean: f64) -> f64 {
        if self.cooperation == 0.0 {
            own
        } else {
            (1.0 - self.cooperation) * own + self.cooperation * member_mean
        }
    }
}

/// Gaussian bell with peak 1.
pub fn bell(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub goal: f64,
    pub smooth: f64,
    pub collision: f64,
    pub total: f64,
}

/// Goal term for a position against the current goal.
pub fn goal_reward(config: &RewardConfig, position: Vec2, goal: Vec2, at_deadline: bool) -> f64 {
    let heat = bell(position.distance(goal), config.goal_sigma);
    if at_deadline {
        heat * config.deadline_multiplier
    } else {
        heat
    }
}

pub fn smooth_reward(config: &RewardConfig, accel: f64, steer_delta: f64) -> f64 {
    let a = bell(accel, config.accel_sigma);
    let d = bell(steer_delta, config.steer_sigma);
    match config.smooth_form {
        SmoothForm::Shifted => (a - 1.0) + (d - 1.0),
        SmoothForm::Literal => -a - d,
    }
}

/// `-1` when the agent is closer than the collision distance to another agent
/// or has left the drivable area.
pub fn collision_reward(config: &RewardConfig, nearest_agent: f64, on_road: bool) -> f64 {
    if nearest_agent < config.collision_distance || !on_road {
        -1.0
    } else {
        0.0
    }
}

pub fn breakdown(config: &RewardConfig, goal: f64, smooth: f64, collision: f64) -> RewardBreakdown {
    RewardBreakdown { goal, smooth, collision, total: config.total(goal, smooth, collision) }
}
