//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! output value. [`Tape::backward`] walks the nodes in reverse insertion order,
//! which is a valid reverse topological order because an operation can only
//! reference nodes that already exist. Nodes that do not depend on any
//! differentiable leaf are never visited, so constants (data, frozen networks)
//! cost nothing in the backward pass.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{GradMap, ParamGroup, ParamStore, Precision, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Local derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Concat(Var, Var),
    Mean(Var),
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    Mse(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics computed by a training-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    precision: Precision,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            precision,
            ..Self::default()
        }
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

    fn push(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            value.round_f32();
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf not tied to a named parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter. Trainable bindings are differentiable and
    /// shared: binding the same name twice returns the same node. Frozen
    /// bindings are plain constants.
    pub fn bind(&mut self, store: &ParamStore, name: &str, trainable: bool) -> Result<Var> {
        if !trainable {
            return Ok(self.constant(store.get(name)?.clone()));
        }
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.leaf(store.get(name)?.clone());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Makes later trainable bindings of `name` resolve to `v`.
    pub fn alias(&mut self, name: &str, v: Var) {
        self.params.insert(name.to_string(), v);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `x · w + bias`, with `bias` a `1 x d_out` row broadcast over the batch.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        if bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(Error::Dimension {
                op: "affine bias",
                left: wv.shape(),
                right: bv.shape(),
            });
        }
        let mut out = xv.matmul(wv)?;
        let b = bv.data().to_vec();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(bias);
        Ok(self.push(out, Op::Affine(x, w, bias), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| k * x);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = self.value(a).map(|x| kind.apply(x));
        let ng = self.ng(a);
        self.push(out, Op::Act(a, kind), ng)
    }

    /// Column-wise concatenation `[a ‖ b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hconcat(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Concat(a, b), ng))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        let ng = self.ng(a);
        self.push(out, Op::Mean(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Batch mean of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::Dimension {
                op: "cross entropy labels",
                left: lv.shape(),
                right: (labels.len(), 1),
            });
        }
        let c = lv.cols();
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index(format!("label {bad} outside [0, {c})")));
        }
        let mut probs = Tensor::zeros(lv.rows(), c);
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            loss += log_z - row[label];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        loss /= labels.len() as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Mean squared elementwise difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.len() as f64;
        let loss = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b), ng))
    }

    /// Training-mode batch normalization: standardizes each column by the batch
    /// statistics, then applies `gamma * xhat + beta`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let (b, d) = xv.shape();
        let mean = xv.column_means();
        let mut var = vec![0.0; d];
        for r in 0..b {
            for (j, v) in xv.row(r).iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        var.iter_mut().for_each(|v| *v /= b as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.normalize(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Evaluation-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.normalize(x, gamma, beta, mean, inv_std, false)
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (b, d) = xv.shape();
        for (name, p) in [("batch norm gamma", gamma), ("batch norm beta", beta)] {
            let s = self.value(p).shape();
            if s != (1, d) {
                return Err(Error::Dimension {
                    op: name,
                    left: (b, d),
                    right: s,
                });
            }
        }
        if mean.len() != d || inv_std.len() != d {
            return Err(Error::Dimension {
                op: "batch norm stats",
                left: (b, d),
                right: (1, mean.len()),
            });
        }
        let mut xhat = Tensor::zeros(b, d);
        for r in 0..b {
            for j in 0..d {
                xhat.set(r, j, (xv.get(r, j) - mean[j]) * inv_std[j]);
            }
        }
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for r in 0..b {
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = g[j] * *o + be[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar node. Accumulation order is fixed by the
    /// tape order, so repeated passes give bitwise-identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!("backward needs a scalar loss, got {shape:?}")));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Gradients { adj })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(a) => a.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, g.matmul_t(bv));
                }
                if self.ng(*b) {
                    send(*b, av.t_matmul(g));
                }
            }
            Op::Affine(x, w, bias) => {
                if self.ng(*x) {
                    send(*x, g.matmul_t(self.value(*w)));
                }
                if self.ng(*w) {
                    send(*w, self.value(*x).t_matmul(g));
                }
                if self.ng(*bias) {
                    send(*bias, Tensor::row_vector(&g.column_sums()));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(*a, g.zip_map(bv, |x, y| x * y));
                }
                if self.ng(*b) {
                    send(*b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Scale(a, k) => send(*a, g.map(|v| k * v)),
            Op::Act(a, kind) => {
                let xv = self.value(*a);
                let mut out = g.clone();
                for ((o, x), y) in out.data_mut().iter_mut().zip(xv.data()).zip(node.value.data()) {
                    *o *= kind.derivative(*x, *y);
                }
                send(*a, out);
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                let mut ga = Tensor::zeros(rows, ca);
                let mut gb = Tensor::zeros(rows, cb);
                for r in 0..rows {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let k = g.item() / av.len() as f64;
                send(*a, Tensor::full(av.rows(), av.cols(), k));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                send(*a, Tensor::full(av.rows(), av.cols(), g.item()));
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = g.item() / labels.len() as f64;
                let mut out = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    let row = out.row_mut(r);
                    row[l] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= k);
                }
                send(*logits, out);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.item() / av.len() as f64;
                let diff = av.zip_map(bv, |x, y| k * (x - y));
                if self.ng(*b) {
                    send(*b, diff.map(|v| -v));
                }
                send(*a, diff);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (b, d) = g.shape();
                if self.ng(*gamma) {
                    let mut dg = vec![0.0; d];
                    for r in 0..b {
                        for (j, acc) in dg.iter_mut().enumerate() {
                            *acc += g.get(r, j) * xhat.get(r, j);
                        }
                    }
                    send(*gamma, Tensor::row_vector(&dg));
                }
                if self.ng(*beta) {
                    send(*beta, Tensor::row_vector(&g.column_sums()));
                }
                if self.ng(*x) {
                    let gam = self.value(*gamma).data();
                    let mut dx = Tensor::zeros(b, d);
                    for j in 0..d {
                        if *batch_stats {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for r in 0..b {
                                let dxh = g.get(r, j) * gam[j];
                                s1 += dxh;
                                s2 += dxh * xhat.get(r, j);
                            }
                            let n = b as f64;
                            for r in 0..b {
                                let dxh = g.get(r, j) * gam[j];
                                dx.set(r, j, inv_std[j] / n * (n * dxh - s1 - xhat.get(r, j) * s2));
                            }
                        } else {
                            for r in 0..b {
                                dx.set(r, j, g.get(r, j) * gam[j] * inv_std[j]);
                            }
                        }
                    }
                    send(*x, dx);
                }
            }
        }
    }
}

/// Adjoints of every node visited by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.adj.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    /// Gradients for every parameter of `group` in `store`. Parameters that
    /// were not bound as trainable on the tape get zero gradients.
    pub fn params(&self, tape: &Tape, store: &ParamStore, group: ParamGroup) -> Result<GradMap> {
        let mut out = GradMap::new();
        for name in store.names(group) {
            let g = match tape.params.get(&name) {
                Some(&v) => self.wrt(tape, v),
                None => {
                    let (r, c) = store.get(&name)?.shape();
                    Tensor::zeros(r, c)
                }
            };
            out.insert(name, g);
        }
        Ok(out)
    }
}

impl Tensor {
    pub(crate) fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols()];
        for r in 0..self.rows() {
            for (a, b) in s.iter_mut().zip(self.row(r)) {
                *a += b;
            }
        }
        s
    }
}
