use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::io::{read_json, write_json};
use crate::scene::DrivableArea;

pub const PREDICTIONS_FORMAT_VERSION: u32 = 1;
/// Endpoint error above which an agent counts as missed, metres.
pub const MISS_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPrediction {
    pub agent_id: String,
    /// One trajectory per mode, all of equal length.
    pub modes: Vec<Vec<Vec2>>,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<Vec2>>,
}

impl AgentPrediction {
    fn truth(&self) -> Result<&[Vec2]> {
        self.ground_truth.as_deref().ok_or_else(|| Error::Contract(format!("agent {}: no ground truth", self.agent_id)))
    }

    fn check_lengths(&self, truth: &[Vec2]) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Contract(format!("agent {}: no modes", self.agent_id)));
        }
        if truth.is_empty() || self.modes.iter().any(|m| m.len() != truth.len()) {
            return Err(Error::Contract(format!(
                "agent {}: trajectory lengths {:?} do not match ground truth length {}",
                self.agent_id,
                self.modes.iter().map(Vec::len).collect::<Vec<_>>(),
                truth.len()
            )));
        }
        Ok(())
    }

    /// Smallest mean pointwise error over modes.
    pub fn min_ade(&self) -> Result<f64> {
        let truth = self.truth()?;
        self.check_lengths(truth)?;
        Ok(self.modes.iter().map(|m| ade(m, truth)).fold(f64::INFINITY, f64::min))
    }

    /// Smallest endpoint error over modes.
    pub fn min_fde(&self) -> Result<f64> {
        let truth = self.truth()?;
        self.check_lengths(truth)?;
        Ok(self.modes.iter().map(|m| fde(m, truth)).fold(f64::INFINITY, f64::min))
    }

    /// Fraction of this agent's modes lying wholly inside the area.
    pub fn dac(&self, area: &DrivableArea) -> f64 {
        if self.modes.is_empty() {
            return 0.0;
        }
        let inside = self.modes.iter().filter(|m| trajectory_in_area(m, area)).count();
        inside as f64 / self.modes.len() as f64
    }
}

/// Predictions for every agent of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSet {
    pub version: u32,
    pub agents: Vec<AgentPrediction>,
    /// Configuration and seed that produced the predictions.
    #[serde(default)]
    pub run: serde_json::Value,
}

impl PredictionSet {
    pub fn new(agents: Vec<AgentPrediction>) -> Self {
        Self { version: PREDICTIONS_FORMAT_VERSION, agents, run: serde_json::Value::Null }
    }

    pub fn agent(&self, id: &str) -> Option<&AgentPrediction> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PREDICTIONS_FORMAT_VERSION {
            return Err(Error::Validation(format!("unsupported predictions version {}", self.version)));
        }
        for a in &self.agents {
            if a.modes.is_empty() {
                return Err(Error::Validation(format!("agent {}: at least one mode is required", a.agent_id)));
            }
            let len = a.modes[0].len();
            if a.modes.iter().any(|m| m.len() != len) {
                return Err(Error::Validation(format!("agent {}: trajectories differ in length", a.agent_id)));
            }
            if a.probabilities.len() != a.modes.len() {
                return Err(Error::Validation(format!("agent {}: one probability per mode is required", a.agent_id)));
            }
            if a.modes.iter().flatten().chain(a.ground_truth.iter().flatten()).any(|p| !p.is_finite()) {
                return Err(Error::Validation(format!("agent {}: non-finite coordinate", a.agent_id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: Self = read_json(path)?;
        set.validate()?;
        Ok(set)
    }
}

pub fn ade(trajectory: &[Vec2], truth: &[Vec2]) -> f64 {
    trajectory.iter().zip(truth).map(|(p, q)| p.distance(*q)).sum::<f64>() / truth.len() as f64
}

pub fn fde(trajectory: &[Vec2], truth: &[Vec2]) -> f64 {
    trajectory[trajectory.len() - 1].distance(truth[truth.len() - 1])
}

pub fn trajectory_in_area(trajectory: &[Vec2], area: &DrivableArea) -> bool {
    trajectory.iter().all(|p| area.contains(*p))
}

fn mean_over_agents(set: &PredictionSet, f: impl Fn(&AgentPrediction) -> Result<f64>) -> Result<f64> {
    if set.agents.is_empty() {
        return Err(Error::Contract("prediction set has no agents".into()));
    }
    let total = set.agents.iter().map(f).sum::<Result<f64>>()?;
    Ok(total / set.agents.len() as f64)
}

pub fn min_ade(set: &PredictionSet) -> Result<f64> {
    mean_over_agents(set, AgentPrediction::min_ade)
}

pub fn min_fde(set: &PredictionSet) -> Result<f64> {
    mean_over_agents(set, AgentPrediction::min_fde)
}

pub fn miss_rate(set: &PredictionSet, threshold: f64) -> Result<f64> {
    mean_over_agents(set, |a| Ok(if a.min_fde()? > threshold { 1.0 } else { 0.0 }))
}

pub fn dac(set: &PredictionSet, area: &DrivableArea) -> Result<f64> {
    mean_over_agents(set, |a| Ok(a.dac(area)))
}

/// Aggregate metrics over one or more scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "minADE")]
    pub min_ade: f64,
    #[serde(rename = "minFDE")]
    pub min_fde: f64,
    #[serde(rename = "MR")]
    pub miss_rate: f64,
    #[serde(rename = "DAC")]
    pub dac: f64,
    pub n_agents: usize,
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// Agent-weighted metrics over `(predictions, drivable area)` pairs.
    pub fn compute(sets: &[(&PredictionSet, &DrivableArea)], threshold: f64) -> Result<Self> {
        let mut sums = [0.0; 4];
        let mut n = 0;
        for (set, area) in sets {
            for a in &set.agents {
                let f = a.min_fde()?;
                sums[0] += a.min_ade()?;
                sums[1] += f;
                sums[2] += if f > threshold { 1.0 } else { 0.0 };
                sums[3] += a.dac(area);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Contract("no agents to evaluate".into()));
        }
        let k = n as f64;
        Ok(Self {
            min_ade: sums[0] / k,
            min_fde: sums[1] / k,
            miss_rate: sums[2] / k,
            dac: sums[3] / k,
            n_agents: n,
            config: serde_json::Value::Null,
        })
    }
}
