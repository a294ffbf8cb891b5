//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as a node holding its value. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and [`Graph::backward`] walks it once from the end.
//!
//! Operations that can fail on shapes return `Result`. Operations that produce
//! a non-finite value do not fail immediately; the graph remembers the first
//! such fault and reports it from [`Graph::check`] and [`Graph::backward`].

use std::f64::consts::PI;

use crate::error::TensorError;
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{gemm, Axis, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    SmoothL1(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Softmax(Var, Axis),
    LogSoftmax(Var),
    Sum(Var),
    SumAxis(Var, Axis),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, normed: Tensor, inv_std: Vec<f64> },
    GaussianLogProb { x: Var, mean: Var, log_std: Var, log_std_row: bool },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation graph.
///
/// Parameters are read from the borrowed [`ParamStore`]; each parameter is
/// materialised as one leaf no matter how often it is used.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    store: Option<&'p ParamStore>,
    param_nodes: Vec<Option<Var>>,
    fault: Option<TensorError>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), store: None, param_nodes: Vec::new(), fault: None }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self { nodes: Vec::with_capacity(256), store: Some(store), param_nodes: vec![None; store.len()], fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// First non-finite fault recorded during the forward pass, if any.
    pub fn check(&self) -> Result<(), TensorError> {
        match &self.fault {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(TensorError::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, "input")
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.store.expect("graph was built without a parameter store");
        let value = store.get(id).clone();
        let v = self.push(value, Op::Param, true, store.name(id));
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg, "matmul"))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(a);
        self.push(value, Op::Transpose(a), rg, "transpose")
    }

    fn broadcast_kind(&self, a: Var, b: Var, what: &str) -> Result<Broadcast, TensorError> {
        let [ar, ac] = self.shape(a);
        let [br, bc] = self.shape(b);
        if ar == br && ac == bc {
            Ok(Broadcast::Same)
        } else if br == 1 && bc == ac {
            Ok(Broadcast::Row)
        } else if bc == 1 && br == ar {
            Ok(Broadcast::Col)
        } else {
            Err(TensorError::Shape(format!("{what}: {ar}x{ac} with {br}x{bc}")))
        }
    }

    fn broadcast_apply(&self, a: Var, b: Var, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        let cols = av.cols();
        let mut out = av.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let other = match kind {
                Broadcast::Same => bv.data()[i],
                Broadcast::Row => bv.data()[i % cols],
                Broadcast::Col => bv.data()[i / cols],
            };
            *o = f(*o, other);
        }
        out
    }

    /// Elementwise sum. `b` may also be a `1 × c` row or `r × 1` column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let kind = self.broadcast_kind(a, b, "add")?;
        let value = self.broadcast_apply(a, b, kind, |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b, kind), rg, "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let kind = self.broadcast_kind(a, b, "sub")?;
        let value = self.broadcast_apply(a, b, kind, |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b, kind), rg, "sub"))
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let kind = self.broadcast_kind(a, b, "mul")?;
        let value = self.broadcast_apply(a, b, kind, |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b, kind), rg, "mul"))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, k), rg, "scale")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v + k);
        let rg = self.needs(a);
        self.push(value, Op::AddScalar(a), rg, "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.needs(a);
        self.push(value, Op::Relu(a), rg, "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.needs(a);
        self.push(value, Op::Tanh(a), rg, "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.needs(a);
        self.push(value, Op::Exp(a), rg, "exp")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.needs(a);
        self.push(value, Op::Square(a), rg, "square")
    }

    /// Elementwise Huber loss with unit threshold.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 });
        let rg = self.needs(a);
        self.push(value, Op::SmoothL1(a), rg, "smooth_l1")
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        let rg = self.needs(a);
        self.push(value, Op::Clamp(a, lo, hi), rg, "clamp")
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(self.value(b), f64::min)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Minimum(a, b), rg, "minimum"))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let value = self.value(a).softmax(axis);
        let rg = self.needs(a);
        self.push(value, Op::Softmax(a, axis), rg, "softmax")
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for r in 0..x.rows() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for c in 0..x.cols() {
                value.set(r, c, row[c] - lse);
            }
        }
        let rg = self.needs(a);
        self.push(value, Op::LogSoftmax(a), rg, "log_softmax")
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let value = self.value(a).sum_axis(axis);
        let rg = self.needs(a);
        self.push(value, Op::SumAxis(a, axis), rg, "sum_axis")
    }

    pub fn mean_axis(&mut self, a: Var, axis: Axis) -> Var {
        let [r, c] = self.shape(a);
        let n = match axis {
            Axis::Rows => c,
            Axis::Cols => r,
        };
        let s = self.sum_axis(a, axis);
        self.scale(s, 1.0 / n.max(1) as f64)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg, "concat_cols"))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg, "concat_rows"))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let value = self.value(a).slice_cols(start, end)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg, "slice_cols"))
    }

    /// Select rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).gather_rows(indices)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), rg, "gather_rows"))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let value = self.value(a).reshape(rows, cols)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), rg, "reshape"))
    }

    /// Per-row layer normalisation with learned `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if self.shape(gamma) != [1, cols] || self.shape(beta) != [1, cols] {
            return Err(TensorError::Shape(format!("layer_norm gain/bias must be 1x{cols}")));
        }
        let mut normed = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                normed.set(r, c, (row[c] - mean) * is);
            }
            inv_std.push(is);
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut value = normed.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            let c = i % cols;
            *v = *v * g[c] + b[c];
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, normed, inv_std }, rg, "layer_norm"))
    }

    /// Row-wise diagonal-Gaussian log-density, returned as an `r × 1` column.
    ///
    /// `log_std` is either the same shape as `mean` or a single `1 × c` row
    /// shared by every sample.
    pub fn gaussian_log_prob(&mut self, x: Var, mean: Var, log_std: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let mv = self.value(mean);
        let sv = self.value(log_std);
        xv.expect_same_shape(mv, "gaussian_log_prob")?;
        let cols = xv.cols();
        let log_std_row = if sv.shape() == mv.shape() {
            false
        } else if sv.shape() == [1, cols] {
            true
        } else {
            return Err(TensorError::Shape("gaussian_log_prob: log_std shape".into()));
        };
        let mut out = Tensor::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            let mut total = 0.0;
            for c in 0..cols {
                let ls = if log_std_row { sv.get(0, c) } else { sv.get(r, c) };
                let z = (xv.get(r, c) - mv.get(r, c)) * (-ls).exp();
                total += -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln();
            }
            out.set(r, 0, total);
        }
        let rg = self.needs(x) || self.needs(mean) || self.needs(log_std);
        Ok(self.push(out, Op::GaussianLogProb { x, mean, log_std, log_std_row }, rg, "gaussian_log_prob"))
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients, TensorError> {
        self.check()?;
        if self.shape(output) != [1, 1] {
            return Err(TensorError::Graph(format!("backward needs a scalar output, got {:?}", self.shape(output))));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[i].take() else { continue };
            self.propagate(node, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }
        let params = self.param_nodes.iter().enumerate().filter_map(|(p, v)| v.map(|v| (ParamId(p), v))).collect();
        let grads = Gradients { grads, params, n_params: self.param_nodes.len() };
        if grads.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFinite("backward".into()));
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let send = |v: Var, g: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    gemm(up, false, bv, true, &mut ga, 0.0);
                    send(*a, ga, grads);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, up, false, &mut gb, 0.0);
                    send(*b, gb, grads);
                }
            }
            Op::Transpose(a) => send(*a, up.transpose(), grads),
            Op::Add(a, b, kind) => {
                send(*a, up.clone(), grads);
                if self.needs(*b) {
                    send(*b, reduce_broadcast(up.clone(), *kind), grads);
                }
            }
            Op::Sub(a, b, kind) => {
                send(*a, up.clone(), grads);
                if self.needs(*b) {
                    send(*b, reduce_broadcast(up.scale(-1.0), *kind), grads);
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                if self.needs(*a) {
                    let mut ga = up.clone();
                    for (i, g) in ga.data_mut().iter_mut().enumerate() {
                        *g *= match kind {
                            Broadcast::Same => bv.data()[i],
                            Broadcast::Row => bv.data()[i % cols],
                            Broadcast::Col => bv.data()[i / cols],
                        };
                    }
                    send(*a, ga, grads);
                }
                if self.needs(*b) {
                    let prod = up.mul(av).expect("shape checked in forward");
                    send(*b, reduce_broadcast(prod, *kind), grads);
                }
            }
            Op::Scale(a, k) => send(*a, up.scale(*k), grads),
            Op::AddScalar(a) => send(*a, up.clone(), grads),
            Op::Relu(a) => {
                let g = up.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                send(*a, g.expect("same shape"), grads);
            }
            Op::Tanh(a) => {
                let g = up.zip_map(&node.value, |g, y| g * (1.0 - y * y));
                send(*a, g.expect("same shape"), grads);
            }
            Op::Exp(a) => send(*a, up.mul(&node.value).expect("same shape"), grads),
            Op::Square(a) => {
                let g = up.zip_map(self.value(*a), |g, x| 2.0 * x * g);
                send(*a, g.expect("same shape"), grads);
            }
            Op::SmoothL1(a) => {
                let g = up.zip_map(self.value(*a), |g, x| if x.abs() < 1.0 { g * x } else { g * x.signum() });
                send(*a, g.expect("same shape"), grads);
            }
            Op::Clamp(a, lo, hi) => {
                let g = up.zip_map(self.value(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 });
                send(*a, g.expect("same shape"), grads);
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = up.clone();
                let mut gb = up.clone();
                for i in 0..up.len() {
                    if av.data()[i] <= bv.data()[i] {
                        gb.data_mut()[i] = 0.0;
                    } else {
                        ga.data_mut()[i] = 0.0;
                    }
                }
                send(*a, ga, grads);
                send(*b, gb, grads);
            }
            Op::Softmax(a, axis) => {
                let g = match axis {
                    Axis::Rows => softmax_rows_backward(&node.value, up),
                    Axis::Cols => softmax_rows_backward(&node.value.transpose(), &up.transpose()).transpose(),
                };
                send(*a, g, grads);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut g = up.clone();
                for r in 0..y.rows() {
                    let total: f64 = up.row(r).iter().sum();
                    for c in 0..y.cols() {
                        g.set(r, c, up.get(r, c) - y.get(r, c).exp() * total);
                    }
                }
                send(*a, g, grads);
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                send(*a, Tensor::full(r, c, up.item()), grads);
            }
            Op::SumAxis(a, axis) => {
                let [r, c] = self.shape(*a);
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        let v = match axis {
                            Axis::Rows => up.get(i, 0),
                            Axis::Cols => up.get(0, j),
                        };
                        g.set(i, j, v);
                    }
                }
                send(*a, g, grads);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.needs(*p) {
                        send(*p, up.slice_cols(start, start + w).expect("in range"), grads);
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = up.cols();
                let mut start = 0;
                for p in parts {
                    let h = self.shape(*p)[0];
                    if self.needs(*p) {
                        let data = up.data()[start * cols..(start + h) * cols].to_vec();
                        send(*p, Tensor::from_vec(h, cols, data).expect("in range"), grads);
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let [r, c] = self.shape(*a);
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..up.cols() {
                        g.set(i, start + j, up.get(i, j));
                    }
                }
                send(*a, g, grads);
            }
            Op::GatherRows(a, indices) => {
                let [r, c] = self.shape(*a);
                let mut g = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        let v = g.get(i, j) + up.get(k, j);
                        g.set(i, j, v);
                    }
                }
                send(*a, g, grads);
            }
            Op::Reshape(a) => {
                let [r, c] = self.shape(*a);
                send(*a, up.reshape(r, c).expect("same size"), grads);
            }
            Op::LayerNorm { x, gamma, beta, normed, inv_std } => {
                let (rows, cols) = (normed.rows(), normed.cols());
                let g = self.value(*gamma).data();
                if self.needs(*gamma) {
                    let prod = up.mul(normed).expect("same shape");
                    send(*gamma, prod.sum_axis(Axis::Cols), grads);
                }
                if self.needs(*beta) {
                    send(*beta, up.sum_axis(Axis::Cols), grads);
                }
                if self.needs(*x) {
                    let n = cols as f64;
                    let mut gx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..cols).map(|c| up.get(r, c) * g[c]).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = (0..cols).map(|c| dxhat[c] * normed.get(r, c)).sum();
                        for c in 0..cols {
                            let v = inv_std[r] / n * (n * dxhat[c] - sum_d - normed.get(r, c) * sum_dx);
                            gx.set(r, c, v);
                        }
                    }
                    send(*x, gx, grads);
                }
            }
            Op::GaussianLogProb { x, mean, log_std, log_std_row } => {
                let (xv, mv, sv) = (self.value(*x), self.value(*mean), self.value(*log_std));
                let (rows, cols) = (xv.rows(), xv.cols());
                let mut gx = Tensor::zeros(rows, cols);
                let mut gm = Tensor::zeros(rows, cols);
                let mut gs = Tensor::zeros(sv.rows(), sv.cols());
                for r in 0..rows {
                    let u = up.get(r, 0);
                    for c in 0..cols {
                        let sr = if *log_std_row { 0 } else { r };
                        let ls = sv.get(sr, c);
                        let inv = (-ls).exp();
                        let z = (xv.get(r, c) - mv.get(r, c)) * inv;
                        gx.set(r, c, -u * z * inv);
                        gm.set(r, c, u * z * inv);
                        let prev = gs.get(sr, c);
                        gs.set(sr, c, prev + u * (z * z - 1.0));
                    }
                }
                send(*x, gx, grads);
                send(*mean, gm, grads);
                send(*log_std, gs, grads);
            }
        }
    }
}

fn reduce_broadcast(g: Tensor, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => g,
        Broadcast::Row => g.sum_axis(Axis::Cols),
        Broadcast::Col => g.sum_axis(Axis::Rows),
    }
}

fn softmax_rows_backward(y: &Tensor, up: &Tensor) -> Tensor {
    let mut g = up.clone();
    for r in 0..y.rows() {
        let dot: f64 = y.row(r).iter().zip(up.row(r)).map(|(a, b)| a * b).sum();
        for c in 0..y.cols() {
            g.set(r, c, y.get(r, c) * (up.get(r, c) - dot));
        }
    }
    g
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
    n_params: usize,
}

impl Gradients {
    /// Gradient with respect to a node, if it influenced the output.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter used in the forward pass.
    pub fn param_grads(&self) -> ParamGrads {
        let mut out = vec![None; self.n_params];
        for &(id, v) in &self.params {
            out[id.0] = self.wrt(v).cloned();
        }
        ParamGrads::from_vec(out)
    }
}
