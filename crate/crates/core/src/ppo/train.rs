use std::sync::Arc;

use keyplan_tensor::{Adam, AdamConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::env::{EnvConfig, SubScene, SubSceneEnv};
use crate::error::Result;
use crate::geometry::Vec2;
use crate::kinematics::{gaussian_log_density, VehicleState};
use crate::scene::FUTURE_LEN;

use super::buffer::{RolloutBuffer, Transition};
use super::policy::PolicyNet;
use super::update::{ppo_update, PpoConfig};

/// How actions are chosen during an episode.
pub enum ActionMode<'r> {
    /// Policy mean.
    Deterministic,
    /// Gaussian sample from the policy.
    Sample(&'r mut dyn rand::RngCore),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeStats {
    /// Sum of training rewards, averaged over members.
    pub mean_return: f64,
    pub agents: usize,
    pub collisions: usize,
    pub goals: usize,
    pub goals_hit: usize,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub stats: EpisodeStats,
    /// Per member, one transition per step taken.
    pub segments: Vec<Vec<Transition>>,
    /// Per member, state after every step.
    pub states: Vec<Vec<VehicleState>>,
    pub env: SubSceneEnv,
}

/// Run one episode to completion.
pub fn run_episode(
    net: &PolicyNet,
    env_config: &EnvConfig,
    subscene: &Arc<SubScene>,
    mut mode: ActionMode<'_>,
    goal_tolerance: f64,
) -> Result<Episode> {
    let mut env = SubSceneEnv::new(subscene.clone(), *env_config);
    let lanes = &subscene.lanes;
    let memory = net.lane_memory(lanes)?;
    let n = subscene.members.len();
    let mut segments: Vec<Vec<Transition>> = vec![Vec::new(); n];
    let mut states: Vec<Vec<VehicleState>> = vec![Vec::new(); n];
    let mut returns = vec![0.0; n];
    let mut stats =
        EpisodeStats { agents: n, goals: subscene.members.iter().map(|m| m.goals.len()).sum(), ..Default::default() };
    while !env.is_done() {
        let active: Vec<usize> = (0..n).filter(|&i| !env.done()[i]).collect();
        let motions: Vec<_> = active.iter().map(|&i| env.observe(i).motion).collect();
        let outputs = net.evaluate(lanes, memory.as_ref(), &motions)?;
        let mut actions = vec![[0.0; 2]; n];
        let mut raw_actions = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let o = &outputs[k];
            let raw = match &mut mode {
                ActionMode::Deterministic => o.mean,
                ActionMode::Sample(rng) => [0, 1].map(|d| {
                    let z: f64 = StandardNormal.sample(rng);
                    o.mean[d] + o.std[d] * z
                }),
            };
            actions[i] = net.to_physical(raw);
            raw_actions.push((raw, gaussian_log_density(raw, o.mean, o.std)));
        }
        let outcome = env.step(&actions)?;
        let step = env.step_index();
        for (k, &i) in active.iter().enumerate() {
            let (raw, log_prob) = raw_actions[k];
            segments[i].push(Transition {
                lanes: lanes.clone(),
                motion: motions[k],
                action: raw,
                log_prob,
                reward: outcome.training_rewards[i],
                value: outputs[k].value,
                done: outcome.done[i],
            });
            returns[i] += outcome.training_rewards[i];
            let s = env.states()[i];
            states[i].push(s);
            if outcome.rewards[i].is_some_and(|r| r.collision < 0.0) {
                stats.collisions += 1;
            }
            for goal in subscene.members[i].goals.iter().filter(|g| g.step == step) {
                if s.position().distance(goal.position) <= goal_tolerance {
                    stats.goals_hit += 1;
                }
            }
        }
    }
    stats.mean_return = returns.iter().sum::<f64>() / n as f64;
    Ok(Episode { stats, segments, states, env })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateLog {
    pub update: usize,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub collision_rate: f64,
    pub goal_hit_rate: f64,
    pub episodes: usize,
    pub transitions: usize,
}

/// Alternate rollouts and updates. `source` supplies a sub-scene per episode.
pub fn train(
    net: &mut PolicyNet,
    env_config: &EnvConfig,
    config: &PpoConfig,
    updates: usize,
    seed: u64,
    source: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<Arc<SubScene>>,
) -> Result<Vec<UpdateLog>> {
    config.validate()?;
    env_config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adam_config = AdamConfig { lr: config.learning_rate, ..AdamConfig::default() };
    let mut optimizer = Adam::new(adam_config, net.params());
    let mut logs = Vec::with_capacity(updates);
    let mut buffer = RolloutBuffer::new(config.buffer_capacity);
    for update in 0..updates {
        buffer.clear();
        let mut totals = EpisodeStats::default();
        let mut episodes = 0;
        let mut return_sum = 0.0;
        'collect: while buffer.len() < config.rollout {
            let subscene = source(&mut rng)?;
            let episode = run_episode(net, env_config, &subscene, ActionMode::Sample(&mut rng), config.goal_tolerance)?;
            for segment in episode.segments {
                if buffer.len() + segment.len() > buffer.capacity() {
                    break 'collect;
                }
                buffer.push_segment(segment)?;
            }
            episodes += 1;
            return_sum += episode.stats.mean_return;
            totals.agents += episode.stats.agents;
            totals.collisions += episode.stats.collisions;
            totals.goals += episode.stats.goals;
            totals.goals_hit += episode.stats.goals_hit;
        }
        buffer.finish(config.gamma, config.gae_lambda)?;
        let stats = ppo_update(net, &mut optimizer, &buffer, config, &mut rng)?;
        logs.push(UpdateLog {
            update,
            mean_return: return_sum / episodes.max(1) as f64,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            collision_rate: totals.collisions as f64 / totals.agents.max(1) as f64,
            goal_hit_rate: totals.goals_hit as f64 / totals.goals.max(1) as f64,
            episodes,
            transitions: buffer.len(),
        });
    }
    Ok(logs)
}

/// A planned future for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    pub agent_id: String,
    /// [`FUTURE_LEN`] positions at the scene rate; held in place after an early stop.
    pub positions: Vec<Vec2>,
    pub states: Vec<VehicleState>,
}

/// Roll the policy through a sub-scene and return every member's trajectory.
pub fn rollout_predict<R: Rng>(
    net: &PolicyNet,
    env_config: &EnvConfig,
    subscene: &Arc<SubScene>,
    deterministic: bool,
    rng: &mut R,
) -> Result<Vec<PlannedTrajectory>> {
    let mode = if deterministic { ActionMode::Deterministic } else { ActionMode::Sample(rng) };
    let episode = run_episode(net, env_config, subscene, mode, 0.0)?;
    Ok(planned_trajectories(subscene, &episode))
}

/// Member trajectories of a finished episode, padded to [`FUTURE_LEN`].
pub fn planned_trajectories(subscene: &SubScene, episode: &Episode) -> Vec<PlannedTrajectory> {
    subscene
        .members
        .iter()
        .zip(&episode.states)
        .map(|(m, states)| {
            let mut states = states.clone();
            let last = states.last().copied().unwrap_or(m.start);
            states.resize(FUTURE_LEN.max(states.len()), last);
            states.truncate(FUTURE_LEN);
            PlannedTrajectory {
                agent_id: m.agent_id.clone(),
                positions: states.iter().map(|s| s.position()).collect(),
                states,
            }
        })
        .collect()
}
