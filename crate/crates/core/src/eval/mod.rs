//! Forecasting metrics and reference baselines.

mod baseline;
mod metrics;

pub use baseline::{
    constant_velocity_baseline, constant_velocity_predictions, interpolate_keys, key_interpolation_predictions,
};
pub use metrics::{
    ade, dac, fde, min_ade, min_fde, miss_rate, trajectory_in_area, AgentPrediction, MetricsReport, PredictionSet,
    MISS_THRESHOLD, PREDICTIONS_FORMAT_VERSION,
};
