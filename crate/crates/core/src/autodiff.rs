//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Values are computed
//! eagerly, so a graph doubles as the forward pass. [`Graph::backward`] walks the
//! tape in reverse and returns [`Gradients`] for every node that requires one.
//!
//! Tensors are rank 0, 1 or 2 in practice. Elementwise ops require identical
//! shapes; there is no broadcasting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added to every standard deviation produced from an unconstrained value.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// A dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient of length {} for tensor {:?}", delta.len(), self.shape),
            ));
        }
        let buf = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in buf.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Concat(Vec<NodeId>),
    Slice { input: NodeId, start: usize },
    Sum(NodeId),
    Mean(NodeId),
    Square(NodeId),
    Log(NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    GaussianSample { mu: NodeId, sigma: NodeId, eps: Vec<f64> },
    Clamp { input: NodeId, lo: f64, hi: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

/// Recorded computation. Node ids are handed out in evaluation order, so every
/// node's inputs precede it.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Records a trainable leaf holding a copy of `tensor`.
    pub fn param(&mut self, tensor: &Tensor) -> NodeId {
        self.push(Op::Leaf, tensor.shape.clone(), tensor.data.clone(), true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: &Tensor) -> NodeId {
        self.push(Op::Leaf, tensor.shape.clone(), tensor.data.clone(), false)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, vec![data.len()], data, false)
    }

    /// Records a leaf vector that does receive a gradient, e.g. an input whose
    /// sensitivity is being inspected.
    pub fn input_vec(&mut self, data: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, vec![data.len()], data, true)
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n, vec![*m, *n]),
            ([m, k], [k2]) if k == k2 => (*m, *k, 1, vec![*m]),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("cannot multiply {sa:?} by {sb:?}"),
                ))
            }
        };
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (o, row) in out.iter_mut().zip(av.chunks_exact(k)) {
                *o = dot(row, bv);
            }
        } else {
            for i in 0..m {
                let row = &av[i * k..(i + 1) * k];
                let dst = &mut out[i * n..(i + 1) * n];
                for (p, &aip) in row.iter().enumerate() {
                    let brow = &bv[p * n..(p + 1) * n];
                    for (d, &bpj) in dst.iter_mut().zip(brow) {
                        *d += aip * bpj;
                    }
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out_shape, out, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(op, shape, out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(op, shape, out, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    /// `a + c` elementwise for a constant `c`.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { input: a, lo, hi })
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain("log", format!("non-positive argument {bad}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Concatenates along the last dimension. All other dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = match parts.first() {
            Some(&p) => p,
            None => return Err(Error::shape("concat", "no inputs")),
        };
        let lead: Vec<usize> = {
            let s = self.shape(first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        if self.shape(first).is_empty() {
            return Err(Error::shape("concat", "cannot concatenate scalars"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(first), s),
                ));
            }
            widths.push(last_dim(s));
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for row in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[row * w..(row + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.needs(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), shape, out, rg))
    }

    /// Takes `len` entries of the last dimension starting at `start`.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        let w = match s.last() {
            Some(&w) => w,
            None => return Err(Error::shape("slice", "cannot slice a scalar")),
        };
        if start + len > w {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} out of bounds for {s:?}", start + len),
            ));
        }
        let rows = s[..s.len() - 1].iter().product::<usize>();
        let v = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for row in 0..rows {
            out.extend_from_slice(&v[row * w + start..row * w + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::Slice { input: a, start }, shape, out, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::Sum(a), Vec::new(), vec![total], rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::Mean(a), Vec::new(), vec![m], rg)
    }

    /// Reparameterized Gaussian draw `mu + sigma * eps`, with `eps` supplied by
    /// the caller so that gradients flow through `mu` and `sigma` only.
    pub fn gaussian_sample(&mut self, mu: NodeId, sigma: NodeId, eps: &[f64]) -> Result<NodeId> {
        if self.shape(mu) != self.shape(sigma) || eps.len() != self.value(mu).len() {
            return Err(Error::shape(
                "gaussian_sample",
                format!(
                    "mu {:?}, sigma {:?}, eps of length {}",
                    self.shape(mu),
                    self.shape(sigma),
                    eps.len()
                ),
            ));
        }
        if let Some(bad) = self.value(sigma).iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::domain(
                "gaussian_sample",
                format!("sigma must be positive, got {bad}"),
            ));
        }
        let out: Vec<f64> = self
            .value(mu)
            .iter()
            .zip(self.value(sigma))
            .zip(eps)
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        let shape = self.shape(mu).to_vec();
        let rg = self.needs(&[mu, sigma]);
        Ok(self.push(
            Op::GaussianSample {
                mu,
                sigma,
                eps: eps.to_vec(),
            },
            shape,
            out,
            rg,
        ))
    }

    /// `softplus(raw) + SIGMA_FLOOR`, the positive scale used by stochastic heads.
    pub fn positive_scale(&mut self, raw: NodeId) -> NodeId {
        let sp = self.softplus(raw);
        self.offset(sp, SIGMA_FLOOR)
    }

    /// Propagates d`loss`/d(node) back through the tape.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::NotScalar(loss_node.shape.clone()));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if grads[idx].is_empty() || !node.requires_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.propagate(node, &g, &mut grads);
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Vec<f64>]) {
        let nodes = &self.nodes;
        let rg = |id: NodeId| nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = &nodes[a.0].shape;
                let (m, k) = (sa[0], sa[1]);
                let n = if nodes[b.0].shape.len() == 2 {
                    nodes[b.0].shape[1]
                } else {
                    1
                };
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if n == 1 {
                    if rg(*a) {
                        let ga = slot(grads, *a, m * k);
                        for (dst, &gi) in ga.chunks_exact_mut(k).zip(g) {
                            add_into(dst, bv, gi);
                        }
                    }
                    if rg(*b) {
                        let gb = slot(grads, *b, k);
                        for (row, &gi) in av.chunks_exact(k).zip(g) {
                            add_into(gb, row, gi);
                        }
                    }
                    return;
                }
                if rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        let dst = &mut ga[i * k..(i + 1) * k];
                        for (p, d) in dst.iter_mut().enumerate() {
                            let brow = &bv[p * n..(p + 1) * n];
                            *d += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        let row = &av[i * k..(i + 1) * k];
                        for (p, &aip) in row.iter().enumerate() {
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, &x) in dst.iter_mut().zip(gi) {
                                *d += aip * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if rg(*a) {
                    add_into(slot(grads, *a, g.len()), g, 1.0);
                }
                if rg(*b) {
                    add_into(slot(grads, *b, g.len()), g, sign);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bv = &nodes[b.0].value;
                    let ga = slot(grads, *a, g.len());
                    for ((d, &x), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                }
                if rg(*b) {
                    let av = &nodes[a.0].value;
                    let gb = slot(grads, *b, g.len());
                    for ((d, &x), &y) in gb.iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.len());
                for ((d, &x), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *d += x * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, g.len());
                for ((d, &x), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *d += x * y * (1.0 - y);
                }
            }
            Op::Softplus(a) => {
                let input = &nodes[a.0].value;
                let ga = slot(grads, *a, g.len());
                for ((d, &x), &u) in ga.iter_mut().zip(g).zip(input) {
                    *d += x * sigmoid(u);
                }
            }
            Op::Concat(parts) => {
                let total = last_dim(&node.shape);
                let rows = node.value.len() / total.max(1);
                let mut offset = 0;
                for p in parts {
                    let w = last_dim(&nodes[p.0].shape);
                    if rg(*p) {
                        let gp = slot(grads, *p, rows * w);
                        for row in 0..rows {
                            add_into(
                                &mut gp[row * w..(row + 1) * w],
                                &g[row * total + offset..row * total + offset + w],
                                1.0,
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { input, start } => {
                let w = last_dim(&nodes[input.0].shape);
                let len = last_dim(&node.shape);
                let rows = node.value.len() / len.max(1);
                let gi = slot(grads, *input, rows * w);
                for row in 0..rows {
                    add_into(
                        &mut gi[row * w + start..row * w + start + len],
                        &g[row * len..(row + 1) * len],
                        1.0,
                    );
                }
            }
            Op::Sum(a) => {
                let n = nodes[a.0].value.len();
                for d in slot(grads, *a, n).iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.len();
                let share = g[0] / n.max(1) as f64;
                for d in slot(grads, *a, n).iter_mut() {
                    *d += share;
                }
            }
            Op::Square(a) => {
                let input = &nodes[a.0].value;
                let ga = slot(grads, *a, g.len());
                for ((d, &x), &u) in ga.iter_mut().zip(g).zip(input) {
                    *d += 2.0 * u * x;
                }
            }
            Op::Log(a) => {
                let input = &nodes[a.0].value;
                let ga = slot(grads, *a, g.len());
                for ((d, &x), &u) in ga.iter_mut().zip(g).zip(input) {
                    *d += x / u;
                }
            }
            Op::Scale(a, factor) => add_into(slot(grads, *a, g.len()), g, *factor),
            Op::Offset(a) => add_into(slot(grads, *a, g.len()), g, 1.0),
            Op::Clamp { input, lo, hi } => {
                let iv = &nodes[input.0].value;
                let gi = slot(grads, *input, g.len());
                for ((d, &x), &u) in gi.iter_mut().zip(g).zip(iv) {
                    if u >= *lo && u <= *hi {
                        *d += x;
                    }
                }
            }
            Op::GaussianSample { mu, sigma, eps } => {
                if rg(*mu) {
                    add_into(slot(grads, *mu, g.len()), g, 1.0);
                }
                if rg(*sigma) {
                    let gs = slot(grads, *sigma, g.len());
                    for ((d, &x), &e) in gs.iter_mut().zip(g).zip(eps) {
                        *d += x * e;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut Vec<f64> {
    let s = &mut grads[id.0];
    if s.is_empty() {
        s.resize(len, 0.0);
    }
    s
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

/// Result of [`Graph::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to `id`, or `None` if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads
            .get(id.0)
            .filter(|g| !g.is_empty())
            .map(|g| g.as_slice())
    }

    /// Gradient of `id`, with zeros where the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Vec<f64> {
        self.get(id).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}
