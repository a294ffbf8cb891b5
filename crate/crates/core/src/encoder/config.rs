use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How heterogeneity enters the local aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// One aggregation group, no node-type attribute.
    None,
    /// One aggregation group, node type appended to node attributes.
    TypeAttr,
    /// One group per direction, node type appended to node attributes.
    #[default]
    DirectionStacked,
    /// One group per node type, direction appended to edge attributes.
    TypeStacked,
}

impl Ablation {
    pub const ALL: [Ablation; 4] =
        [Ablation::None, Ablation::TypeAttr, Ablation::DirectionStacked, Ablation::TypeStacked];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::TypeAttr => "type-attr",
            Ablation::DirectionStacked => "direction-stacked",
            Ablation::TypeStacked => "type-stacked",
        }
    }

    pub fn groups(self) -> usize {
        match self {
            Ablation::None | Ablation::TypeAttr => 1,
            Ablation::DirectionStacked => 4,
            Ablation::TypeStacked => 2,
        }
    }

    pub fn type_in_node(self) -> bool {
        matches!(self, Ablation::TypeAttr | Ablation::DirectionStacked)
    }

    pub fn direction_in_edge(self) -> bool {
        self == Ablation::TypeStacked
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::Input(format!(
                "unknown ablation {s:?} (expected none, type-attr, direction-stacked or type-stacked)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub width: usize,
    pub heads: usize,
    pub local_layers: usize,
    pub temporal_layers: usize,
    pub global_layers: usize,
    pub decoder_layers: usize,
    /// Local graph radius, metres.
    pub radius: f64,
    pub modes: usize,
    /// Seconds after the present, strictly increasing, within the prediction horizon.
    pub key_timestamps: Vec<f64>,
    pub ablation: Ablation,
    /// Metres represented by one unit of decoded offset.
    pub offset_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            local_layers: 1,
            temporal_layers: 3,
            global_layers: 3,
            decoder_layers: 1,
            radius: 50.0,
            modes: 6,
            key_timestamps: vec![1.5, 3.0],
            ablation: Ablation::DirectionStacked,
            offset_scale: 10.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Validation(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if [self.local_layers, self.temporal_layers, self.global_layers, self.decoder_layers].contains(&0) {
            return Err(Error::Validation("every layer count must be at least 1".into()));
        }
        if self.modes == 0 {
            return Err(Error::Validation("at least one mode is required".into()));
        }
        if !(self.radius > 0.0) || !(self.offset_scale > 0.0) {
            return Err(Error::Validation("radius and offset scale must be positive".into()));
        }
        let horizon = crate::scene::FUTURE_LEN as f64 * crate::scene::DT;
        let ts = &self.key_timestamps;
        if ts.is_empty()
            || ts.iter().any(|t| !(*t > 0.0 && *t <= horizon + 1e-9))
            || ts.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Validation(format!("key timestamps must be strictly increasing within (0, {horizon}]")));
        }
        Ok(())
    }
}
