//! Heterogeneous graph encoder predicting multi-modal key positions.

mod calibrate;
mod config;
mod model;
mod train;

pub use calibrate::calibrate_key_positions;
pub use config::{Ablation, EncoderConfig};
pub use model::{
    edge_groups, edge_inputs, history_inputs, lane_node_inputs, HeteroEncoder, LocalLayer, SceneOutput,
    ENCODER_FORMAT_VERSION, HISTORY_FEATURES, LANE_NODE_FEATURES,
};
pub use train::{fit, key_targets, scene_loss, train_encoder, EncoderTrainConfig, EpochLog, SceneLoss};
