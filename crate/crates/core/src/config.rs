//! Run configuration shared by every command and echoed into artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderTrainConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::MISS_THRESHOLD;
use crate::io::read_json;
use crate::ppo::{PolicyConfig, PpoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlTrainConfig {
    pub updates: usize,
}

impl Default for RlTrainConfig {
    fn default() -> Self {
        Self { updates: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub miss_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { miss_threshold: MISS_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub encoder_training: EncoderTrainConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub rl: RlTrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.encoder_training.validate()?;
        self.env.validate()?;
        self.policy.validate()?;
        self.ppo.validate()?;
        if self.rl.updates == 0 {
            return Err(Error::Validation("rl.updates must be positive".into()));
        }
        if !(self.eval.miss_threshold >= 0.0) {
            return Err(Error::Validation("eval.miss_threshold must be non-negative".into()));
        }
        Ok(())
    }

    /// The configuration as embedded in artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}
