use std::sync::Arc;

use crate::env::{LaneContext, MOTION_FEATURES};
use crate::error::{Error, Result};

use super::gae::{compute_gae, normalize};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub lanes: Arc<LaneContext>,
    pub motion: [f64; MOTION_FEATURES],
    /// Raw (unclamped) action in normalised units.
    pub action: [f64; 2],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Complete per-agent episode segments, stored back to back.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    capacity: usize,
    transitions: Vec<Transition>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, transitions: Vec::new(), advantages: Vec::new(), returns: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.transitions.len() >= self.capacity
    }

    /// Append one agent's complete episode. The last transition must be terminal.
    pub fn push_segment(&mut self, segment: Vec<Transition>) -> Result<()> {
        if segment.is_empty() {
            return Ok(());
        }
        if !segment.last().is_some_and(|t| t.done) || segment[..segment.len() - 1].iter().any(|t| t.done) {
            return Err(Error::Contract("segment must end with its only terminal transition".into()));
        }
        let room = self.capacity.saturating_sub(self.transitions.len());
        if segment.len() > room {
            return Err(Error::Contract(format!("buffer capacity {} exceeded", self.capacity)));
        }
        self.transitions.extend(segment);
        self.advantages.clear();
        self.returns.clear();
        Ok(())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Compute advantages (normalised) and returns over all stored segments.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = self.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        let (mut adv, ret) = compute_gae(&rewards, &values, &dones, 0.0, gamma, lambda)?;
        normalize(&mut adv);
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.advantages.clear();
        self.returns.clear();
    }
}
