//! Multi-modal key positions: the hand-off between the encoder and the planner.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::io::{read_json, write_json};
use crate::scene::{Scene, DT};

pub const KEYS_FORMAT_VERSION: u32 = 1;

/// Candidate key positions for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentKeys {
    pub agent_id: String,
    /// `modes[f][k]` is mode `f` at the `k`-th key timestamp, in the global frame.
    pub modes: Vec<Vec<Vec2>>,
    /// One probability per mode, summing to one.
    pub probabilities: Vec<f64>,
}

impl AgentKeys {
    /// Index of the most probable mode (first on ties).
    pub fn best_mode(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyPositionSet {
    pub version: u32,
    /// Seconds after the present, strictly increasing.
    pub key_timestamps: Vec<f64>,
    pub agents: Vec<AgentKeys>,
    /// Configuration that produced the set, when known.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub run: serde_json::Value,
}

impl KeyPositionSet {
    pub fn new(key_timestamps: Vec<f64>, agents: Vec<AgentKeys>) -> Self {
        Self { version: KEYS_FORMAT_VERSION, key_timestamps, agents, run: serde_json::Value::Null }
    }

    /// Single-mode set taken from each agent's ground-truth future.
    pub fn from_ground_truth(scene: &Scene, key_timestamps: &[f64]) -> Result<Self> {
        let agents = scene
            .agents
            .iter()
            .map(|a| {
                let future = a
                    .future_gt
                    .as_ref()
                    .ok_or_else(|| Error::Input(format!("agent {} has no ground-truth future", a.id)))?;
                let keys = key_timestamps.iter().map(|t| future[key_step(*t) - 1].pos).collect();
                Ok(AgentKeys { agent_id: a.id.clone(), modes: vec![keys], probabilities: vec![1.0] })
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(key_timestamps.to_vec(), agents))
    }

    pub fn agent(&self, id: &str) -> Option<&AgentKeys> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    pub fn n_modes(&self) -> usize {
        self.agents.first().map_or(0, |a| a.modes.len())
    }

    /// Step index (1-based, at [`DT`]) of each key timestamp.
    pub fn key_steps(&self) -> Vec<usize> {
        self.key_timestamps.iter().map(|t| key_step(*t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != KEYS_FORMAT_VERSION {
            return Err(Error::Validation(format!("unsupported key-position version {}", self.version)));
        }
        if self.key_timestamps.is_empty() || self.key_timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("key timestamps must be non-empty and strictly increasing".into()));
        }
        let k = self.key_timestamps.len();
        let f = self.n_modes();
        for a in &self.agents {
            if a.modes.len() != f {
                return Err(Error::Validation(format!("agent {}: every agent needs {f} modes", a.agent_id)));
            }
            if a.modes.is_empty() || a.modes.len() != a.probabilities.len() {
                return Err(Error::Validation(format!("agent {}: mode and probability counts differ", a.agent_id)));
            }
            if a.modes.iter().any(|m| m.len() != k || m.iter().any(|p| !p.is_finite())) {
                return Err(Error::Validation(format!(
                    "agent {}: each mode needs {k} finite key positions",
                    a.agent_id
                )));
            }
            let total: f64 = a.probabilities.iter().sum();
            if (total - 1.0).abs() > 1e-6 || a.probabilities.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Validation(format!("agent {}: probabilities must sum to 1", a.agent_id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let keys: Self = read_json(path)?;
        keys.validate()?;
        Ok(keys)
    }
}

/// Step index of a timestamp at the scene rate.
pub fn key_step(t: f64) -> usize {
    (t / DT).round() as usize
}
