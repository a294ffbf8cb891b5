use std::path::Path;

use keyplan_tensor::nn::{multi_head_attention, EncoderLayer, FeedForward, LayerNorm, Linear, Mlp};
use keyplan_tensor::{Axis, Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::io::{read_json, write_json};
use crate::keys::{AgentKeys, KeyPositionSet};
use crate::scene::{build_hetero_graph_at, HeteroGraph, NodeKind, NodeType, Scene, HISTORY_LEN};

use super::config::{Ablation, EncoderConfig};

pub const ENCODER_FORMAT_VERSION: u32 = 1;
/// Per-step history features: position and displacement in the agent frame.
pub const HISTORY_FEATURES: usize = 4;
/// Lane node features: position, heading (cos, sin), travel direction, passability.
pub const LANE_NODE_FEATURES: usize = 6;
const POSITION_SCALE: f64 = 25.0;
const HEAD_INIT: f64 = 0.05;

/// History of one agent in its own frame, one row per step.
pub fn history_inputs(scene: &Scene, agent: usize) -> Result<Tensor> {
    let track = &scene.agents[agent];
    if track.history.len() < HISTORY_LEN {
        return Err(Error::Input(format!(
            "agent {}: history has {} states, need {HISTORY_LEN}",
            track.id,
            track.history.len()
        )));
    }
    let origin = track.last_position();
    let heading = scene.agent_heading(agent);
    let h = &track.history[track.history.len() - HISTORY_LEN..];
    let mut data = Vec::with_capacity(HISTORY_LEN * HISTORY_FEATURES);
    for (k, p) in h.iter().enumerate() {
        let local = p.pos.to_frame(origin, heading);
        let step = if k > 0 { (p.pos - h[k - 1].pos).rotate(-heading) } else { Vec2::ZERO };
        data.extend_from_slice(&[local.x / 10.0, local.y / 10.0, step.x, step.y]);
    }
    Ok(Tensor::from_vec(HISTORY_LEN, HISTORY_FEATURES, data)?)
}

/// Lane node features in the centre frame, in graph node order (lane nodes only).
pub fn lane_node_inputs(graph: &HeteroGraph) -> Tensor {
    let mut rows = 0;
    let mut data = Vec::new();
    for (node, edge) in graph.nodes.iter().zip(&graph.edges) {
        if let NodeKind::Lane { direction_attr, passable, .. } = &node.kind {
            let p = edge.relative_position;
            data.extend_from_slice(&[
                p.x / POSITION_SCALE,
                p.y / POSITION_SCALE,
                edge.relative_heading.cos(),
                edge.relative_heading.sin(),
                direction_attr.signed(),
                passable.signed(),
            ]);
            rows += 1;
        }
    }
    Tensor::from_vec(rows, LANE_NODE_FEATURES, data).expect("lane feature shape")
}

/// Edge inputs: source position in the centre frame, relative heading, and
/// optionally the direction label.
pub fn edge_inputs(graph: &HeteroGraph, with_direction: bool) -> Tensor {
    let cols = if with_direction { 8 } else { 4 };
    let mut data = Vec::with_capacity(graph.edges.len() * cols);
    for e in &graph.edges {
        let p = e.relative_position;
        data.extend_from_slice(&[
            p.x / POSITION_SCALE,
            p.y / POSITION_SCALE,
            e.relative_heading.cos(),
            e.relative_heading.sin(),
        ]);
        if with_direction {
            let mut one_hot = [0.0; 4];
            one_hot[e.direction.index()] = 1.0;
            data.extend_from_slice(&one_hot);
        }
    }
    Tensor::from_vec(graph.edges.len(), cols, data).expect("edge feature shape")
}

/// Edge indices of each aggregation group.
pub fn edge_groups(graph: &HeteroGraph, ablation: Ablation) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); ablation.groups()];
    for (i, e) in graph.edges.iter().enumerate() {
        let g = match ablation {
            Ablation::None | Ablation::TypeAttr => 0,
            Ablation::DirectionStacked => e.direction.index(),
            Ablation::TypeStacked => graph.nodes[e.source].node_type().index(),
        };
        groups[g].push(i);
    }
    groups
}

#[derive(Debug, Clone)]
struct TemporalStack {
    input: Linear,
    position: ParamId,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
}

/// Directional aggregation followed by the weighted combination.
#[derive(Debug, Clone)]
pub struct LocalLayer {
    pub query: Vec<Linear>,
    pub key: Vec<Linear>,
    pub value: Vec<Linear>,
    pub score: Linear,
    norm: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct GlobalLayer {
    norm: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

/// Graph outputs for every agent of a scene.
#[derive(Debug, Clone)]
pub struct SceneOutput {
    /// N × (modes · keys · 2) offsets in each agent's frame, in offset units.
    pub offsets: Var,
    /// N × modes mode scores.
    pub logits: Var,
    /// Origin and heading of each agent's frame.
    pub frames: Vec<(Vec2, f64)>,
}

#[derive(Debug, Clone)]
pub struct HeteroEncoder {
    config: EncoderConfig,
    store: ParamStore,
    temporal: TemporalStack,
    lane_embed: Linear,
    edge_mlp: Mlp,
    local: Vec<LocalLayer>,
    pair_mlp: Mlp,
    global: Vec<GlobalLayer>,
    decoder: Vec<Linear>,
    offset_head: Linear,
    mode_head: Linear,
}

impl HeteroEncoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let h = config.heads;
        let ab = config.ablation;
        let mut s = ParamStore::new();
        let temporal = TemporalStack {
            input: Linear::new(&mut s, "temporal.in", HISTORY_FEATURES, d, rng),
            position: s.add("temporal.position", Tensor::randn(HISTORY_LEN, d, 0.02, rng)),
            layers: (0..config.temporal_layers)
                .map(|i| EncoderLayer::new(&mut s, &format!("temporal{i}"), d, h, rng))
                .collect(),
            norm: LayerNorm::new(&mut s, "temporal.norm", d),
        };
        let lane_embed = Linear::new(&mut s, "lane_embed", LANE_NODE_FEATURES, d, rng);
        let edge_in = if ab.direction_in_edge() { 8 } else { 4 };
        let edge_mlp = Mlp::new(&mut s, "edge", &[edge_in, d, d], rng);
        let node_dim = d + if ab.type_in_node() { NodeType::COUNT } else { 0 };
        let source_dim = node_dim + d;
        let local = (0..config.local_layers)
            .map(|l| {
                let per_group = |s: &mut ParamStore, what: &str, input: usize, rng: &mut R| -> Vec<Linear> {
                    (0..ab.groups())
                        .map(|gi| Linear::without_bias(s, &format!("local{l}.{what}{gi}"), input, d, rng))
                        .collect()
                };
                LocalLayer {
                    query: per_group(&mut s, "q", d, rng),
                    key: per_group(&mut s, "k", source_dim, rng),
                    value: per_group(&mut s, "v", source_dim, rng),
                    score: Linear::new(&mut s, &format!("local{l}.score"), d, 1, rng),
                    norm: LayerNorm::new(&mut s, &format!("local{l}.norm"), d),
                    ff: FeedForward::new(&mut s, &format!("local{l}"), d, 2 * d, rng),
                }
            })
            .collect();
        let pair_mlp = Mlp::new(&mut s, "pair", &[4, d, d], rng);
        let global = (0..config.global_layers)
            .map(|l| GlobalLayer {
                norm: LayerNorm::new(&mut s, &format!("global{l}.norm"), d),
                query: Linear::new(&mut s, &format!("global{l}.q"), d, d, rng),
                key: Linear::new(&mut s, &format!("global{l}.k"), d, d, rng),
                value: Linear::new(&mut s, &format!("global{l}.v"), d, d, rng),
                output: Linear::new(&mut s, &format!("global{l}.o"), d, d, rng),
                ff_norm: LayerNorm::new(&mut s, &format!("global{l}.ff_norm"), d),
                ff: FeedForward::new(&mut s, &format!("global{l}"), d, 2 * d, rng),
            })
            .collect();
        let decoder =
            (0..config.decoder_layers).map(|i| Linear::new(&mut s, &format!("decoder{i}"), d, d, rng)).collect();
        let keys = config.key_timestamps.len();
        let offset_head =
            Linear::with_init(&mut s, "offset_head", Tensor::uniform(d, config.modes * keys * 2, HEAD_INIT, rng), true);
        let mode_head = Linear::with_init(&mut s, "mode_head", Tensor::uniform(d, config.modes, HEAD_INIT, rng), true);
        Ok(Self {
            config,
            store: s,
            temporal,
            lane_embed,
            edge_mlp,
            local,
            pair_mlp,
            global,
            decoder,
            offset_head,
            mode_head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn local_layers(&self) -> &[LocalLayer] {
        &self.local
    }

    /// Temporal embedding of every agent (N × width), each from its own history.
    pub fn embed_agents(&self, g: &mut Graph, scene: &Scene) -> Result<Var> {
        let mut rows = Vec::with_capacity(scene.agents.len());
        let pos = g.param(self.temporal.position);
        for a in 0..scene.agents.len() {
            let x = g.constant(history_inputs(scene, a)?);
            let mut h = self.temporal.input.forward(g, x)?;
            h = g.add(h, pos)?;
            for layer in &self.temporal.layers {
                h = layer.forward(g, h)?;
            }
            let last = g.gather_rows(h, &[HISTORY_LEN - 1])?;
            rows.push(self.temporal.norm.forward(g, last)?);
        }
        Ok(g.concat_rows(&rows)?)
    }

    /// Source rows (node attributes then edge embedding) for every edge.
    pub fn edge_sources(&self, g: &mut Graph, graph: &HeteroGraph, agents: Var) -> Result<Var> {
        let ab = self.config.ablation;
        let agent_rows: Vec<usize> = graph.agent_neighbors().collect();
        let lanes = lane_node_inputs(graph);
        if agent_rows.len() + lanes.rows() != graph.nodes.len()
            || graph.nodes[..agent_rows.len()].iter().any(|n| n.node_type() != NodeType::Agent)
        {
            return Err(Error::Contract("graph nodes must list agents before lanes".into()));
        }
        let mut parts = Vec::new();
        if !agent_rows.is_empty() {
            parts.push(g.gather_rows(agents, &agent_rows)?);
        }
        if lanes.rows() > 0 {
            let x = g.constant(lanes);
            parts.push(self.lane_embed.forward(g, x)?);
        }
        let mut nodes = g.concat_rows(&parts)?;
        if ab.type_in_node() {
            let one_hot: Vec<f64> = graph.nodes.iter().flat_map(|n| n.node_type().one_hot()).collect();
            let t = g.constant(Tensor::from_vec(graph.nodes.len(), NodeType::COUNT, one_hot)?);
            nodes = g.concat_cols(&[nodes, t])?;
        }
        let e = g.constant(edge_inputs(graph, ab.direction_in_edge()));
        let edges = self.edge_mlp.forward(g, e)?;
        Ok(g.concat_cols(&[nodes, edges])?)
    }

    /// Attention of the centre vector over one group's sources. Empty groups give zeros.
    pub fn aggregate_group(
        &self,
        g: &mut Graph,
        layer: &LocalLayer,
        group: usize,
        centre: Var,
        sources: Option<Var>,
        edges: &[usize],
    ) -> Result<Var> {
        let Some(sources) = sources.filter(|_| !edges.is_empty()) else {
            return Ok(g.constant(Tensor::zeros(1, self.config.width)));
        };
        let s = g.gather_rows(sources, edges)?;
        let q = layer.query[group].forward(g, centre)?;
        let k = layer.key[group].forward(g, s)?;
        let v = layer.value[group].forward(g, s)?;
        Ok(multi_head_attention(g, q, k, v, self.config.heads)?)
    }

    /// Softmax-weighted sum of the group aggregates plus the centre vector.
    /// Returns the combined vector and the 1 × groups weights.
    pub fn combine_groups(
        &self,
        g: &mut Graph,
        layer: &LocalLayer,
        centre: Var,
        aggregates: &[Var],
    ) -> Result<(Var, Var)> {
        let scores: Vec<Var> = aggregates.iter().map(|a| layer.score.forward(g, *a)).collect::<Result<_, _>>()?;
        let scores = g.concat_cols(&scores)?;
        let weights = g.softmax(scores, Axis::Rows);
        let stacked = g.concat_rows(aggregates)?;
        let mixed = g.matmul(weights, stacked)?;
        Ok((g.add(mixed, centre)?, weights))
    }

    /// Local encoding of one centre agent over its graph.
    pub fn encode_local(&self, g: &mut Graph, graph: &HeteroGraph, agents: Var) -> Result<Var> {
        let sources = if graph.edges.is_empty() { None } else { Some(self.edge_sources(g, graph, agents)?) };
        let groups = edge_groups(graph, self.config.ablation);
        let mut centre = g.gather_rows(agents, &[graph.center])?;
        for layer in &self.local {
            let aggregates = groups
                .iter()
                .enumerate()
                .map(|(gi, edges)| self.aggregate_group(g, layer, gi, centre, sources, edges))
                .collect::<Result<Vec<_>>>()?;
            let (combined, _) = self.combine_groups(g, layer, centre, &aggregates)?;
            let h = layer.norm.forward(g, combined)?;
            let f = layer.ff.forward(g, h)?;
            centre = g.add(combined, f)?;
        }
        Ok(centre)
    }

    /// Pairwise relative-pose inputs: row `i·N + j` is agent `j` seen from agent `i`.
    pub fn pair_inputs(frames: &[(Vec2, f64)]) -> Tensor {
        let n = frames.len();
        let mut data = Vec::with_capacity(n * n * 4);
        for (oi, hi) in frames {
            for (oj, hj) in frames {
                let p = oj.to_frame(*oi, *hi);
                let dh = wrap_angle(hj - hi);
                data.extend_from_slice(&[p.x / POSITION_SCALE, p.y / POSITION_SCALE, dh.cos(), dh.sin()]);
            }
        }
        Tensor::from_vec(n * n, 4, data).expect("pair feature shape")
    }

    /// All-to-all attention among agent vectors with relative-pose keys and values.
    pub fn global_interaction(&self, g: &mut Graph, vectors: Var, frames: &[(Vec2, f64)]) -> Result<Var> {
        let n = frames.len();
        let pairs = g.constant(Self::pair_inputs(frames));
        let rel = self.pair_mlp.forward(g, pairs)?;
        let mut x = vectors;
        for layer in &self.global {
            let h = layer.norm.forward(g, x)?;
            let q = layer.query.forward(g, h)?;
            let k = layer.key.forward(g, h)?;
            let v = layer.value.forward(g, h)?;
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let idx: Vec<usize> = (i * n..(i + 1) * n).collect();
                let r = g.gather_rows(rel, &idx)?;
                let qi = g.gather_rows(q, &[i])?;
                let ki = g.add(k, r)?;
                let vi = g.add(v, r)?;
                rows.push(multi_head_attention(g, qi, ki, vi, self.config.heads)?);
            }
            let attended = g.concat_rows(&rows)?;
            let o = layer.output.forward(g, attended)?;
            x = g.add(x, o)?;
            let h = layer.ff_norm.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            x = g.add(x, f)?;
        }
        Ok(x)
    }

    /// Offsets and mode scores from encoded agent vectors.
    pub fn decode(&self, g: &mut Graph, vectors: Var) -> Result<(Var, Var)> {
        let mut h = vectors;
        for layer in &self.decoder {
            let z = layer.forward(g, h)?;
            h = g.relu(z);
        }
        Ok((self.offset_head.forward(g, h)?, self.mode_head.forward(g, h)?))
    }

    /// Full forward over every agent of the scene.
    pub fn forward(&self, g: &mut Graph, scene: &Scene) -> Result<SceneOutput> {
        if scene.agents.is_empty() {
            return Err(Error::Input("scene has no agents".into()));
        }
        let agents = self.embed_agents(g, scene)?;
        let mut locals = Vec::with_capacity(scene.agents.len());
        let mut frames = Vec::with_capacity(scene.agents.len());
        for a in 0..scene.agents.len() {
            let graph = build_hetero_graph_at(scene, a, self.config.radius)?;
            frames.push((graph.center_position, graph.center_heading));
            locals.push(self.encode_local(g, &graph, agents)?);
        }
        let locals = g.concat_rows(&locals)?;
        let vectors = self.global_interaction(g, locals, &frames)?;
        let (offsets, logits) = self.decode(g, vectors)?;
        Ok(SceneOutput { offsets, logits, frames })
    }

    /// Key positions for every agent, in the global frame.
    pub fn predict(&self, scene: &Scene) -> Result<KeyPositionSet> {
        let mut g = Graph::with_params(&self.store);
        let out = self.forward(&mut g, scene)?;
        g.check().map_err(|e| Error::Numeric(format!("encoder forward: {e}")))?;
        Ok(self.to_keys(scene, g.value(out.offsets), g.value(out.logits), &out.frames))
    }

    pub fn to_keys(&self, scene: &Scene, offsets: &Tensor, logits: &Tensor, frames: &[(Vec2, f64)]) -> KeyPositionSet {
        let k = self.config.key_timestamps.len();
        let probs = logits.softmax(Axis::Rows);
        let agents = scene
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (origin, heading) = frames[i];
                let modes = (0..self.config.modes)
                    .map(|f| {
                        (0..k)
                            .map(|j| {
                                let c = (f * k + j) * 2;
                                let local =
                                    Vec2::new(offsets.get(i, c), offsets.get(i, c + 1)) * self.config.offset_scale;
                                local.from_frame(origin, heading)
                            })
                            .collect()
                    })
                    .collect();
                AgentKeys { agent_id: a.id.clone(), modes, probabilities: probs.row(i).to_vec() }
            })
            .collect();
        KeyPositionSet::new(self.config.key_timestamps.clone(), agents)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_run(path, serde_json::Value::Null)
    }

    /// Save with the producing run configuration embedded.
    pub fn save_with_run(&self, path: &Path, run: serde_json::Value) -> Result<()> {
        let ckpt = EncoderCheckpoint {
            version: ENCODER_FORMAT_VERSION,
            config: self.config.clone(),
            params: self.store.clone(),
            run,
        };
        write_json(path, &ckpt)
    }

    /// Load a checkpoint. When `expected` is given the stored configuration must equal it.
    pub fn load(path: &Path, expected: Option<&EncoderConfig>) -> Result<Self> {
        let ckpt: EncoderCheckpoint = read_json(path)?;
        if ckpt.version != ENCODER_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported encoder checkpoint version {}", ckpt.version)));
        }
        if let Some(cfg) = expected {
            if cfg != &ckpt.config {
                return Err(Error::Checkpoint("encoder checkpoint was trained with a different configuration".into()));
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut enc = HeteroEncoder::new(ckpt.config, &mut rng)?;
        enc.store.load_from(&ckpt.params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(enc)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderCheckpoint {
    version: u32,
    config: EncoderConfig,
    params: ParamStore,
    #[serde(default)]
    run: serde_json::Value,
}
