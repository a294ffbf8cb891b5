//! Layers built from [`Graph`] operations.
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParamStore`] that the
//! graph borrows for the duration of one forward/backward pass.

use rand::Rng;

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Axis, Tensor};

/// Scaled dot-product attention, `softmax(Q Kᵀ / √d_k) V`.
///
/// An empty key set yields a zero output.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var, TensorError> {
    let [_, dq] = g.shape(q);
    let [nk, dk] = g.shape(k);
    let [nv, _] = g.shape(v);
    if dq != dk {
        return Err(TensorError::Shape(format!("attention: query width {dq}, key width {dk}")));
    }
    if nk != nv {
        return Err(TensorError::Shape(format!("attention: {nk} keys, {nv} values")));
    }
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = g.softmax(scores, Axis::Rows);
    g.matmul(weights, v)
}

/// Attention with the model width split evenly across `heads`, outputs concatenated.
pub fn multi_head_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, TensorError> {
    let width = g.shape(q)[1];
    if heads == 0 || width % heads != 0 || g.shape(k)[1] != width || g.shape(v)[1] != width {
        return Err(TensorError::Shape(format!("cannot split width {width} into {heads} heads")));
    }
    if heads == 1 {
        return attention(g, q, k, v);
    }
    let dh = width / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        outs.push(attention(g, qh, kh, vh)?);
    }
    g.concat_cols(&outs)
}

/// Affine map `x W + b` applied to each row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Xavier-uniform weights and zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self::with_init(store, name, Tensor::uniform(in_dim, out_dim, bound, rng), true)
    }

    pub fn without_bias<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self::with_init(store, name, Tensor::uniform(in_dim, out_dim, bound, rng), false)
    }

    pub fn with_init(store: &mut ParamStore, name: &str, weight: Tensor, bias: bool) -> Self {
        let [in_dim, out_dim] = weight.shape();
        let weight = store.add(format!("{name}.weight"), weight);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim)));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(1, width)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var, TensorError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has at least one layer")
    }
}

/// Projected multi-head attention with an output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.q"), width, width, rng),
            key: Linear::new(store, &format!("{name}.k"), width, width, rng),
            value: Linear::new(store, &format!("{name}.v"), width, width, rng),
            output: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, query: Var, context: Var) -> Result<Var, TensorError> {
        let q = self.query.forward(g, query)?;
        let k = self.key.forward(g, context)?;
        let v = self.value.forward(g, context)?;
        let attended = multi_head_attention(g, q, k, v, self.heads)?;
        self.output.forward(g, attended)
    }

    /// Self-attention where every row is its own length-one sequence.
    ///
    /// The softmax over a single key is exactly one, so this reduces to the
    /// value and output projections.
    pub fn forward_rowwise_self(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let v = self.value.forward(g, x)?;
        self.output.forward(g, v)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.ff1"), width, hidden, rng),
            outer: Linear::new(store, &format!("{name}.ff2"), hidden, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        self.outer.forward(g, h)
    }
}

/// Pre-norm transformer encoder layer: self-attention then feed-forward,
/// each wrapped in a residual connection.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.ln1"), width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.ln2"), width),
            ff: FeedForward::new(store, name, width, 2 * width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let h = self.norm_attn.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm_ff.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        g.add(x, f)
    }
}
