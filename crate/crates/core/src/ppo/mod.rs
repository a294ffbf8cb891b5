//! Proximal policy optimisation with a transformer actor-critic.

mod buffer;
mod gae;
mod policy;
mod train;
mod update;

pub use buffer::{RolloutBuffer, Transition};
pub use gae::{compute_gae, normalize};
pub use policy::{
    action_scale, lane_inputs, motion_inputs, ActionStats, PolicyArch, PolicyConfig, PolicyNet, PolicyOutput,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use train::{
    planned_trajectories, rollout_predict, run_episode, train, ActionMode, Episode, EpisodeStats, PlannedTrajectory,
    UpdateLog,
};
pub use update::{ppo_loss, ppo_update, LossVars, PpoConfig, UpdateStats};
