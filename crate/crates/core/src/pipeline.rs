//! End-to-end prediction: key positions, calibration, sub-scene planning.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::{calibrate_key_positions, HeteroEncoder};
use crate::env::{divide_subscenes, EnvConfig, TraceRow};
use crate::error::{Error, Result};
use crate::eval::{AgentPrediction, PredictionSet};
use crate::geometry::Vec2;
use crate::keys::KeyPositionSet;
use crate::ppo::{planned_trajectories, run_episode, ActionMode, PolicyNet};
use crate::scene::Scene;

/// Sub-scene membership for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeGroups {
    pub mode: usize,
    pub groups: Vec<Vec<String>>,
}

/// Planner output for every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub predictions: PredictionSet,
    pub groups: Vec<ModeGroups>,
    /// Per mode, simulator trace rows of every sub-scene.
    pub traces: Vec<Vec<TraceRow>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub raw_keys: KeyPositionSet,
    pub calibrated_keys: KeyPositionSet,
    pub plan: Plan,
}

/// Plan every mode of the given key positions with the policy.
pub fn plan_from_keys(scene: &Scene, keys: &KeyPositionSet, policy: &PolicyNet, env: &EnvConfig) -> Result<Plan> {
    keys.validate()?;
    if policy.dynamics() != env.dynamics {
        return Err(Error::Checkpoint("policy was trained with different dynamics".into()));
    }
    let n_modes = keys.n_modes();
    let mut trajectories: Vec<Vec<Vec<Vec2>>> = vec![vec![Vec::new(); n_modes]; keys.agents.len()];
    let mut groups = Vec::with_capacity(n_modes);
    let mut traces: Vec<Vec<TraceRow>> = vec![Vec::new(); n_modes];
    for mode in 0..n_modes {
        let subscenes = divide_subscenes(scene, keys, mode, env)?;
        let mut names = Vec::with_capacity(subscenes.len());
        for sub in subscenes {
            let sub = Arc::new(sub);
            names.push(sub.members.iter().map(|m| m.agent_id.clone()).collect());
            let episode = run_episode(policy, env, &sub, ActionMode::Deterministic, 0.0)?;
            traces[mode].extend(episode.env.trace().iter().cloned());
            for plan in planned_trajectories(&sub, &episode) {
                let i = keys.agents.iter().position(|a| a.agent_id == plan.agent_id).expect("member comes from keys");
                trajectories[i][mode] = plan.positions;
            }
        }
        groups.push(ModeGroups { mode, groups: names });
    }
    let agents = keys
        .agents
        .iter()
        .zip(trajectories)
        .map(|(k, modes)| {
            let ground_truth = scene.agents.iter().find(|a| a.id == k.agent_id).and_then(|a| a.future_positions());
            AgentPrediction {
                agent_id: k.agent_id.clone(),
                modes,
                probabilities: k.probabilities.clone(),
                ground_truth,
            }
        })
        .collect();
    Ok(Plan { predictions: PredictionSet::new(agents), groups, traces })
}

/// Encode, calibrate and plan one scene.
pub fn predict_scene(
    scene: &Scene,
    encoder: &HeteroEncoder,
    policy: &PolicyNet,
    env: &EnvConfig,
) -> Result<Prediction> {
    let raw_keys = encoder.predict(scene)?;
    let calibrated_keys = calibrate_key_positions(&raw_keys, scene);
    let plan = plan_from_keys(scene, &calibrated_keys, policy, env)?;
    Ok(Prediction { raw_keys, calibrated_keys, plan })
}

/// Sub-scenes built from ground-truth keys, for policy training.
pub fn training_subscenes(
    scenes: &[Scene],
    key_timestamps: &[f64],
    env: &EnvConfig,
) -> Result<Vec<Arc<crate::env::SubScene>>> {
    let mut pool = Vec::new();
    for scene in scenes {
        let keys = KeyPositionSet::from_ground_truth(scene, key_timestamps)?;
        pool.extend(divide_subscenes(scene, &keys, 0, env)?.into_iter().map(Arc::new));
    }
    if pool.is_empty() {
        return Err(Error::Input("no training sub-scenes".into()));
    }
    Ok(pool)
}
