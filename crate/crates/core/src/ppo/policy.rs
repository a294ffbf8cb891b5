use std::path::Path;

use keyplan_tensor::nn::{EncoderLayer, FeedForward, LayerNorm, Linear, Mlp, MultiHeadAttention};
use keyplan_tensor::{Axis, Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{Dynamics, EnvConfig, LaneContext, LANE_FEATURES, MOTION_FEATURES};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::io::{read_json, write_json};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArch {
    /// Lane-token encoder with a motion-token decoder.
    #[default]
    Transformer,
    /// Two hidden layers over pooled lane features and the motion features.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub arch: PolicyArch,
    pub width: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub initial_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            arch: PolicyArch::Transformer,
            width: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            initial_log_std: -1.5,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Validation(format!(
                "policy width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.arch == PolicyArch::Transformer && (self.encoder_layers == 0 || self.decoder_layers == 0) {
            return Err(Error::Validation("policy needs at least one encoder and one decoder layer".into()));
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.initial_log_std) {
            return Err(Error::Validation("initial log-std outside its clamp range".into()));
        }
        Ok(())
    }
}

/// Normalised lane features in the sub-scene frame, one row per token.
pub fn lane_inputs(lanes: &LaneContext) -> Tensor {
    let mut data = Vec::with_capacity(lanes.tokens.len() * LANE_FEATURES);
    for t in &lanes.tokens {
        let p = t.position.to_frame(lanes.origin, lanes.heading);
        data.extend_from_slice(&[
            p.x / 20.0,
            p.y / 20.0,
            t.travel,
            t.left_offset / 2.0,
            t.right_offset / 2.0,
            t.passable,
        ]);
    }
    Tensor::from_vec(lanes.tokens.len(), LANE_FEATURES, data).expect("lane feature shape")
}

/// Normalised motion features with the pose re-expressed in the sub-scene frame.
pub fn motion_inputs(lanes: &LaneContext, motion: &[f64; MOTION_FEATURES]) -> [f64; MOTION_FEATURES] {
    let [v, a, steer, yaw_rate, s_goal, d_goal, t_remain, heading, x, y] = *motion;
    let p = Vec2::new(x, y).to_frame(lanes.origin, lanes.heading);
    [
        v / 10.0,
        a / 5.0,
        steer / 0.3,
        yaw_rate,
        s_goal / 20.0,
        d_goal / 2.0,
        t_remain / 3.0,
        wrap_angle(heading - lanes.heading),
        p.x / 20.0,
        p.y / 20.0,
    ]
}

/// Per-row action statistics in normalised action units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub value: f64,
}

/// Graph outputs for a batch: `mean` n×2, `value` n×1, `log_std` 1×2 (clamped).
#[derive(Debug, Clone, Copy)]
pub struct PolicyOutput {
    pub mean: Var,
    pub value: Var,
    pub log_std: Var,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: MultiHeadAttention,
    norm_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            norm_self: LayerNorm::new(store, &format!("{name}.ln1"), width),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), width, heads, rng),
            norm_cross: LayerNorm::new(store, &format!("{name}.ln2"), width),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross"), width, heads, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.ln3"), width),
            ff: FeedForward::new(store, name, width, 2 * width, rng),
        }
    }

    /// Each row is an independent one-token query; `memory` may be absent.
    fn forward(&self, g: &mut Graph, x: Var, memory: Option<Var>) -> Result<Var> {
        let h = self.norm_self.forward(g, x)?;
        let a = self.self_attn.forward_rowwise_self(g, h)?;
        let mut x = g.add(x, a)?;
        if let Some(m) = memory {
            let h = self.norm_cross.forward(g, x)?;
            let c = self.cross_attn.forward(g, h, m)?;
            x = g.add(x, c)?;
        }
        let h = self.norm_ff.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        Ok(g.add(x, f)?)
    }
}

#[derive(Debug, Clone)]
enum Trunk {
    Transformer {
        lane_in: Linear,
        motion_in: Linear,
        encoder: Vec<EncoderLayer>,
        encoder_norm: LayerNorm,
        decoder: Vec<DecoderLayer>,
        decoder_norm: LayerNorm,
    },
    Mlp {
        body: Mlp,
    },
}

/// Shared-trunk actor-critic.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    config: PolicyConfig,
    /// Physical size of one normalised action unit per dimension.
    action_scale: [f64; 2],
    dynamics: Dynamics,
    store: ParamStore,
    trunk: Trunk,
    mean_head: Linear,
    value_head: Linear,
    log_std: ParamId,
}

/// Physical action units for the environment's dynamics.
pub fn action_scale(env: &EnvConfig) -> [f64; 2] {
    match env.dynamics {
        Dynamics::Kinematic => [env.limits.max_steer_delta, env.limits.max_speed_delta],
        Dynamics::Positional => {
            let reach = env.limits.max_speed * env.dt;
            [reach, reach]
        }
    }
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, env: &EnvConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let mut store = ParamStore::new();
        let (trunk, head_in) = match config.arch {
            PolicyArch::Transformer => {
                let lane_in = Linear::new(&mut store, "lane_in", LANE_FEATURES, w, rng);
                let motion_in = Linear::new(&mut store, "motion_in", MOTION_FEATURES, w, rng);
                let encoder = (0..config.encoder_layers)
                    .map(|i| EncoderLayer::new(&mut store, &format!("enc{i}"), w, config.heads, rng))
                    .collect();
                let encoder_norm = LayerNorm::new(&mut store, "enc_norm", w);
                let decoder = (0..config.decoder_layers)
                    .map(|i| DecoderLayer::new(&mut store, &format!("dec{i}"), w, config.heads, rng))
                    .collect();
                let decoder_norm = LayerNorm::new(&mut store, "dec_norm", w);
                (Trunk::Transformer { lane_in, motion_in, encoder, encoder_norm, decoder, decoder_norm }, w)
            }
            PolicyArch::Mlp => {
                let body = Mlp::new(&mut store, "mlp", &[LANE_FEATURES + MOTION_FEATURES, w, w], rng);
                (Trunk::Mlp { body }, w)
            }
        };
        // Small initial means keep early actions near zero.
        let mean_weight = Tensor::uniform(head_in, 2, 1e-3, rng);
        let mean_head = Linear::with_init(&mut store, "mean_head", mean_weight, true);
        let value_head = Linear::new(&mut store, "value_head", head_in, 1, rng);
        let log_std = store.add("log_std", Tensor::full(1, 2, config.initial_log_std));
        Ok(Self {
            config,
            action_scale: action_scale(env),
            dynamics: env.dynamics,
            store,
            trunk,
            mean_head,
            value_head,
            log_std,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn action_scale(&self) -> [f64; 2] {
        self.action_scale
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Encoded lane tokens, or `None` when the context is empty or the
    /// architecture does not attend over lanes.
    pub fn encode_lanes(&self, g: &mut Graph, lanes: &LaneContext) -> Result<Option<Var>> {
        let Trunk::Transformer { lane_in, encoder, encoder_norm, .. } = &self.trunk else {
            return Ok(None);
        };
        if lanes.tokens.is_empty() {
            return Ok(None);
        }
        let x = g.constant(lane_inputs(lanes));
        let mut h = lane_in.forward(g, x)?;
        for layer in encoder {
            h = layer.forward(g, h)?;
        }
        Ok(Some(encoder_norm.forward(g, h)?))
    }

    /// Trunk features for rows of motion inputs that share one lane context.
    ///
    /// `memory` must come from [`PolicyNet::encode_lanes`] on the same context
    /// (it may be a constant holding a cached value).
    pub fn trunk_rows(
        &self,
        g: &mut Graph,
        lanes: &LaneContext,
        memory: Option<Var>,
        motions: &[[f64; MOTION_FEATURES]],
    ) -> Result<Var> {
        let rows: Vec<f64> = motions.iter().flat_map(|m| motion_inputs(lanes, m)).collect();
        let motion = Tensor::from_vec(motions.len(), MOTION_FEATURES, rows)?;
        match &self.trunk {
            Trunk::Transformer { motion_in, decoder, decoder_norm, .. } => {
                let x = g.constant(motion);
                let mut h = motion_in.forward(g, x)?;
                for layer in decoder {
                    h = layer.forward(g, h, memory)?;
                }
                Ok(decoder_norm.forward(g, h)?)
            }
            Trunk::Mlp { body } => {
                let pooled = if lanes.tokens.is_empty() {
                    Tensor::zeros(1, LANE_FEATURES)
                } else {
                    lane_inputs(lanes).sum_axis(Axis::Cols).scale(1.0 / lanes.tokens.len() as f64)
                };
                let tiled: Vec<f64> = (0..motions.len()).flat_map(|_| pooled.data().iter().copied()).collect();
                let pooled = Tensor::from_vec(motions.len(), LANE_FEATURES, tiled)?;
                let input = Tensor::concat_cols(&[&pooled, &motion])?;
                let x = g.constant(input);
                let h = body.forward(g, x)?;
                Ok(g.relu(h))
            }
        }
    }

    /// Heads on top of stacked trunk rows.
    pub fn heads(&self, g: &mut Graph, trunk: Var) -> Result<PolicyOutput> {
        let mean = self.mean_head.forward(g, trunk)?;
        let value = self.value_head.forward(g, trunk)?;
        let raw = g.param(self.log_std);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        Ok(PolicyOutput { mean, value, log_std })
    }

    /// Full forward for groups of rows, each group sharing a lane context.
    /// Output rows follow the group order.
    pub fn forward(&self, g: &mut Graph, groups: &[(&LaneContext, &[[f64; MOTION_FEATURES]])]) -> Result<PolicyOutput> {
        let mut parts = Vec::with_capacity(groups.len());
        for (lanes, motions) in groups {
            let memory = self.encode_lanes(g, lanes)?;
            parts.push(self.trunk_rows(g, lanes, memory, motions)?);
        }
        let trunk = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        self.heads(g, trunk)
    }

    /// Cached lane encoding for repeated evaluation on one context.
    pub fn lane_memory(&self, lanes: &LaneContext) -> Result<Option<Tensor>> {
        let mut g = Graph::with_params(&self.store);
        let m = self.encode_lanes(&mut g, lanes)?;
        g.check()?;
        Ok(m.map(|m| g.value(m).clone()))
    }

    /// Action statistics for rows sharing `lanes`, reusing a cached encoding.
    pub fn evaluate(
        &self,
        lanes: &LaneContext,
        memory: Option<&Tensor>,
        motions: &[[f64; MOTION_FEATURES]],
    ) -> Result<Vec<ActionStats>> {
        let mut g = Graph::with_params(&self.store);
        let mem = memory.map(|m| g.constant(m.clone()));
        let trunk = self.trunk_rows(&mut g, lanes, mem, motions)?;
        let out = self.heads(&mut g, trunk)?;
        g.check().map_err(|e| Error::Numeric(format!("policy forward: {e}")))?;
        let mean = g.value(out.mean);
        let value = g.value(out.value);
        let log_std = g.value(out.log_std);
        let std = [log_std.get(0, 0).exp(), log_std.get(0, 1).exp()];
        Ok((0..motions.len())
            .map(|i| ActionStats { mean: [mean.get(i, 0), mean.get(i, 1)], std, value: value.get(i, 0) })
            .collect())
    }

    /// Physical action for a normalised one.
    pub fn to_physical(&self, action: [f64; 2]) -> [f64; 2] {
        [action[0] * self.action_scale[0], action[1] * self.action_scale[1]]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_run(path, serde_json::Value::Null)
    }

    /// Save with the producing run configuration embedded.
    pub fn save_with_run(&self, path: &Path, run: serde_json::Value) -> Result<()> {
        write_json(
            path,
            &PolicyCheckpoint {
                version: POLICY_FORMAT_VERSION,
                config: self.config,
                dynamics: self.dynamics,
                action_scale: self.action_scale,
                params: self.store.clone(),
                run,
            },
        )
    }

    /// Load a checkpoint; its configuration must match `config` and `env`.
    pub fn load(path: &Path, config: &PolicyConfig, env: &EnvConfig) -> Result<Self> {
        let ckpt: PolicyCheckpoint = read_json(path)?;
        if ckpt.version != POLICY_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported policy checkpoint version {}", ckpt.version)));
        }
        if &ckpt.config != config || ckpt.dynamics != env.dynamics || ckpt.action_scale != action_scale(env) {
            return Err(Error::Checkpoint("policy checkpoint was trained with a different configuration".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = PolicyNet::new(ckpt.config, env, &mut rng)?;
        net.store.load_from(&ckpt.params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(net)
    }

    /// Configuration stored in a checkpoint file.
    pub fn peek_config(path: &Path) -> Result<(PolicyConfig, Dynamics)> {
        let ckpt: PolicyCheckpoint = read_json(path)?;
        Ok((ckpt.config, ckpt.dynamics))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyCheckpoint {
    version: u32,
    config: PolicyConfig,
    dynamics: Dynamics,
    action_scale: [f64; 2],
    params: ParamStore,
    #[serde(default)]
    run: serde_json::Value,
}
