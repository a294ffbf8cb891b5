//! Hierarchical trajectory prediction: a heterogeneous graph encoder proposes
//! key future positions, and a reinforcement-learning planner with a bicycle
//! model drives each agent through them.

pub mod config;
pub mod encoder;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod keys;
pub mod kinematics;
pub mod pipeline;
pub mod plot;
pub mod ppo;
pub mod scene;

pub use error::{Error, Result};
