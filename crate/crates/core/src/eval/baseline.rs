use crate::geometry::Vec2;
use crate::keys::KeyPositionSet;
use crate::scene::{AgentTrack, Scene, FUTURE_LEN};

use super::metrics::{AgentPrediction, PredictionSet};

/// Extrapolate the last observed velocity over the prediction horizon.
pub fn constant_velocity_baseline(track: &AgentTrack) -> Vec<Vec2> {
    let last = track.last_position();
    let step = track.last_displacement();
    (1..=FUTURE_LEN).map(|k| last + step * k as f64).collect()
}

/// Piecewise-linear path from `start` through keys reached at the given steps,
/// continued at the last segment's velocity. Returns [`FUTURE_LEN`] points.
pub fn interpolate_keys(start: Vec2, keys: &[Vec2], steps: &[usize]) -> Vec<Vec2> {
    let mut anchors = vec![(0usize, start)];
    anchors.extend(steps.iter().copied().zip(keys.iter().copied()));
    (1..=FUTURE_LEN)
        .map(|t| {
            let seg = anchors.windows(2).position(|w| t <= w[1].0).unwrap_or(anchors.len().saturating_sub(2));
            match anchors.get(seg..seg + 2) {
                Some([(s0, p0), (s1, p1)]) if s1 > s0 => *p0 + (*p1 - *p0) * ((t - s0) as f64 / (s1 - s0) as f64),
                _ => anchors[anchors.len() - 1].1,
            }
        })
        .collect()
}

/// Trajectories straight from key positions, one per mode, without planning.
pub fn key_interpolation_predictions(scene: &Scene, keys: &KeyPositionSet) -> PredictionSet {
    let steps = keys.key_steps();
    let agents = keys
        .agents
        .iter()
        .filter_map(|k| {
            let track = scene.agents.iter().find(|a| a.id == k.agent_id)?;
            Some(AgentPrediction {
                agent_id: k.agent_id.clone(),
                modes: k.modes.iter().map(|m| interpolate_keys(track.last_position(), m, &steps)).collect(),
                probabilities: k.probabilities.clone(),
                ground_truth: track.future_positions(),
            })
        })
        .collect();
    PredictionSet::new(agents)
}

/// Constant-velocity predictions for every agent, one mode each.
pub fn constant_velocity_predictions(scene: &Scene) -> PredictionSet {
    PredictionSet::new(
        scene
            .agents
            .iter()
            .map(|a| AgentPrediction {
                agent_id: a.id.clone(),
                modes: vec![constant_velocity_baseline(a)],
                probabilities: vec![1.0],
                ground_truth: a.future_positions(),
            })
            .collect(),
    )
}
