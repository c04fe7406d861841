//! Reverse-mode differentiation over a recorded tape.
//!
//! Every op evaluates eagerly, stores its output on the tape and remembers
//! which nodes it read. `Tape::backward` replays the record in reverse. Nodes
//! that no gradient-requiring leaf can reach are skipped, so gradients are
//! never materialized for frozen parameters or constants.

use std::cell::RefCell;
use std::sync::Arc;

use super::tensor::{broadcast_offsets, broadcast_shapes, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, shared_rhs: bool },
    Transpose { a: usize, d0: usize, d1: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    BroadcastTo(usize),
    Scale(usize, f64),
    Exp(usize),
    Log(usize),
    Elu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    LayerNorm { a: usize, inv_std: Vec<f64> },
    Concat { inputs: Vec<usize>, axis: usize },
    Reshape(usize),
    Sum { a: usize, axis: usize },
    Mean { a: usize, axis: usize },
    MaskedFill { a: usize, mask: Vec<bool> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } => vec![*a, *b],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            Transpose { a, .. }
            | LayerNorm { a, .. }
            | Sum { a, .. }
            | Mean { a, .. }
            | MaskedFill { a, .. } => vec![*a],
            BroadcastTo(a) | Scale(a, _) | Exp(a) | Log(a) | Elu(a) | Sigmoid(a) | Tanh(a)
            | Softmax(a) | Reshape(a) => vec![*a],
            Concat { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward computation. Not `Sync`: a tape belongs to one
/// execution context.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that participates in differentiation.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(Arc::new(value), true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(Arc::new(value), false)
    }

    pub fn leaf(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, allow_neg_inf: bool) -> Result<Var<'_>> {
        if let Some(index) = value
            .data()
            .iter()
            .position(|v| !(v.is_finite() || (allow_neg_inf && *v == f64::NEG_INFINITY)))
        {
            return Err(Error::NonFinite { op: name, index });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
        }
        let leaves = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| matches!(nodes[id].op, Op::Leaf))
                    .map(|g| Tensor::from_raw(nodes[id].value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.leaves.get(var.id).and_then(|g| g.as_ref())
    }

    /// Whether any gradient buffer was allocated for `var`.
    pub fn materialized(&self, var: Var<'_>) -> bool {
        self.get(var).is_some()
    }

    /// Gradient of `var`, or zeros when it is off the loss path.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

/// ∂loss/∂p for every `p` in `params`; parameters off the loss path get zeros.
pub fn grad_of<'t>(loss: Var<'t>, params: &[Var<'t>]) -> Result<Vec<Tensor>> {
    let grads = loss.tape.backward(loss)?;
    Ok(params.iter().map(|&p| grads.get_or_zeros(p)).collect())
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, delta: Vec<f64>) {
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta),
    }
}

/// Sum a gradient over broadcast axes back onto `in_shape`.
fn reduce_to(g: Vec<f64>, in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if in_shape == out_shape {
        return g;
    }
    let n: usize = in_shape.iter().product();
    let mut out = vec![0.0; n];
    for (gi, off) in g.iter().zip(broadcast_offsets(in_shape, out_shape)) {
        out[off] += gi;
    }
    out
}

fn expand_to(t: &Tensor, out_shape: &[usize]) -> Vec<f64> {
    if t.shape() == out_shape {
        return t.data().to_vec();
    }
    broadcast_offsets(t.shape(), out_shape)
        .into_iter()
        .map(|o| t.data()[o])
        .collect()
}

/// (outer, extent, inner) around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let needs = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul { a, b, shared_rhs } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.shape()[av.rank() - 2], av.shape()[av.rank() - 1]);
            let n = bv.shape()[bv.rank() - 1];
            let batches = av.numel() / (m * k);
            if needs(*a) {
                let mut da = vec![0.0; av.numel()];
                for bt in 0..batches {
                    let boff = if *shared_rhs { 0 } else { bt * k * n };
                    for i in 0..m {
                        let grow = &g[bt * m * n + i * n..][..n];
                        for p in 0..k {
                            let brow = &bv.data()[boff + p * n..][..n];
                            da[bt * m * k + i * k + p] =
                                grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            if needs(*b) {
                let mut db = vec![0.0; bv.numel()];
                for bt in 0..batches {
                    let boff = if *shared_rhs { 0 } else { bt * k * n };
                    for i in 0..m {
                        let grow = &g[bt * m * n + i * n..][..n];
                        for p in 0..k {
                            let aip = av.data()[bt * m * k + i * k + p];
                            let drow = &mut db[boff + p * n..][..n];
                            drow.iter_mut().zip(grow).for_each(|(d, x)| *d += aip * x);
                        }
                    }
                }
                accumulate(grads, *b, db);
            }
        }
        Op::Transpose { a, d0, d1 } => {
            let gt = Tensor::from_raw(out.shape().to_vec(), g.to_vec());
            let back = gt.transpose(*d0, *d1).expect("axes validated in forward");
            accumulate(grads, *a, back.into_data());
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let shape = out.shape();
            let op = &nodes[id].op;
            if needs(*a) {
                let da: Vec<f64> = match op {
                    Op::Add(..) | Op::Sub(..) => g.to_vec(),
                    Op::Mul(..) => g.iter().zip(expand_to(bv, shape)).map(|(g, y)| g * y).collect(),
                    _ => g.iter().zip(expand_to(bv, shape)).map(|(g, y)| g / y).collect(),
                };
                accumulate(grads, *a, reduce_to(da, av.shape(), shape));
            }
            if needs(*b) {
                let db: Vec<f64> = match op {
                    Op::Add(..) => g.to_vec(),
                    Op::Sub(..) => g.iter().map(|g| -g).collect(),
                    Op::Mul(..) => g.iter().zip(expand_to(av, shape)).map(|(g, x)| g * x).collect(),
                    _ => g
                        .iter()
                        .zip(expand_to(av, shape))
                        .zip(expand_to(bv, shape))
                        .map(|((g, x), y)| -g * x / (y * y))
                        .collect(),
                };
                accumulate(grads, *b, reduce_to(db, bv.shape(), shape));
            }
        }
        Op::BroadcastTo(a) => {
            let d = reduce_to(g.to_vec(), nodes[*a].value.shape(), out.shape());
            accumulate(grads, *a, d);
        }
        Op::Scale(a, s) => accumulate(grads, *a, g.iter().map(|g| g * s).collect()),
        Op::Exp(a) => {
            let d = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
            accumulate(grads, *a, d);
        }
        Op::Log(a) => {
            let d = g.iter().zip(nodes[*a].value.data()).map(|(g, x)| g / x).collect();
            accumulate(grads, *a, d);
        }
        Op::Elu(a) => {
            let d = g
                .iter()
                .zip(nodes[*a].value.data())
                .zip(out.data())
                .map(|((g, &x), &y)| if x > 0.0 { *g } else { g * (y + 1.0) })
                .collect();
            accumulate(grads, *a, d);
        }
        Op::Sigmoid(a) => {
            let d = g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(grads, *a, d);
        }
        Op::Tanh(a) => {
            let d = g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(grads, *a, d);
        }
        Op::Softmax(a) => {
            let n = *out.shape().last().unwrap();
            let mut d = vec![0.0; g.len()];
            for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = y * (g - dot);
                }
            }
            accumulate(grads, *a, d);
        }
        Op::LayerNorm { a, inv_std } => {
            let n = *out.shape().last().unwrap();
            let nf = n as f64;
            let mut d = vec![0.0; g.len()];
            for (((dr, gr), yr), s) in d
                .chunks_mut(n)
                .zip(g.chunks(n))
                .zip(out.data().chunks(n))
                .zip(inv_std)
            {
                let mg = gr.iter().sum::<f64>() / nf;
                let mgy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / nf;
                for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = s * (g - mg - y * mgy);
                }
            }
            accumulate(grads, *a, d);
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = split_axis(out.shape(), *axis);
            let total = out.shape()[*axis] * inner;
            let mut start = 0;
            for &i in inputs {
                let chunk = nodes[i].value.shape()[*axis] * inner;
                if needs(i) {
                    let mut d = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        d.extend_from_slice(&g[o * total + start..][..chunk]);
                    }
                    accumulate(grads, i, d);
                }
                start += chunk;
            }
        }
        Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
        Op::Sum { a, axis } | Op::Mean { a, axis } => {
            let in_shape = nodes[*a].value.shape();
            let (outer, n, inner) = split_axis(in_shape, *axis);
            let scale = if matches!(nodes[id].op, Op::Mean { .. }) {
                1.0 / n as f64
            } else {
                1.0
            };
            let mut d = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        d[(o * n + k) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            accumulate(grads, *a, d);
        }
        Op::MaskedFill { a, mask } => {
            let d = g
                .iter()
                .zip(mask)
                .map(|(g, &m)| if m { 0.0 } else { *g })
                .collect();
            accumulate(grads, *a, d);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    fn unary(
        &self,
        name: &'static str,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let data = x.data().iter().map(|&v| f(v)).collect();
        self.tape
            .push(name, Tensor::from_raw(x.shape().to_vec(), data), op, false)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| {
            Error::dim(name, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
        })?;
        let data: Vec<f64> = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let xa = expand_to(&a, &shape);
            let xb = expand_to(&b, &shape);
            xa.into_iter().zip(xb).map(|(x, y)| f(x, y)).collect()
        };
        self.tape.push(name, Tensor::from_raw(shape, data), op, false)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |x, y| x * y)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |x, y| x / y)
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, s), |x| x * s)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    pub fn elu(&self) -> Result<Var<'t>> {
        self.unary("elu", Op::Elu(self.id), |x| if x > 0.0 { x } else { x.exp_m1() })
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        match broadcast_shapes(x.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::dim(
                    "broadcast_to",
                    format!("cannot broadcast {:?} to {:?}", x.shape(), shape),
                ))
            }
        }
        let data = expand_to(&x, shape);
        self.tape.push(
            "broadcast_to",
            Tensor::from_raw(shape.to_vec(), data),
            Op::BroadcastTo(self.id),
            false,
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let t = self.value().reshape(shape)?;
        self.tape.push("reshape", t, Op::Reshape(self.id), false)
    }

    pub fn transpose(&self, d0: usize, d1: usize) -> Result<Var<'t>> {
        let t = self.value().transpose(d0, d1)?;
        self.tape
            .push("transpose", t, Op::Transpose { a: self.id, d0, d1 }, false)
    }

    /// `[..., m, k] × [k, n]` (weight shared over leading axes) or
    /// `[..., m, k] × [..., k, n]` with identical leading axes.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (ar, br) = (a.rank(), b.rank());
        let mismatch = || {
            Error::dim(
                "matmul",
                format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
            )
        };
        if ar < 2 || br < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a.shape()[ar - 2], a.shape()[ar - 1]);
        let (k2, n) = (b.shape()[br - 2], b.shape()[br - 1]);
        let shared_rhs = br == 2;
        if k != k2 || (!shared_rhs && a.shape()[..ar - 2] != b.shape()[..br - 2]) {
            return Err(mismatch());
        }
        let batches = a.numel() / (m * k);
        let mut c = vec![0.0; batches * m * n];
        for bt in 0..batches {
            let boff = if shared_rhs { 0 } else { bt * k * n };
            for i in 0..m {
                let crow = &mut c[bt * m * n + i * n..][..n];
                for p in 0..k {
                    let aip = a.data()[bt * m * k + i * k + p];
                    let brow = &b.data()[boff + p * n..][..n];
                    crow.iter_mut().zip(brow).for_each(|(c, y)| *c += aip * y);
                }
            }
        }
        let mut shape = a.shape()[..ar - 1].to_vec();
        shape.push(n);
        self.tape.push(
            "matmul",
            Tensor::from_raw(shape, c),
            Op::MatMul {
                a: self.id,
                b: other.id,
                shared_rhs,
            },
            false,
        )
    }

    /// Batched product; both operands carry the same leading axes.
    pub fn bmm(&self, other: Var<'t>) -> Result<Var<'t>> {
        if self.shape().len() < 3 || self.shape().len() != other.shape().len() {
            return Err(Error::dim(
                "bmm",
                format!("expected equal-rank batched operands, got {:?} and {:?}", self.shape(), other.shape()),
            ));
        }
        self.matmul(other)
    }

    /// Softmax over the last axis with max-subtraction. `-inf` entries get
    /// zero weight; a row that is entirely `-inf` is a contract error.
    pub fn softmax(&self) -> Result<Var<'t>> {
        let x = self.value();
        let n = *x.shape().last().ok_or_else(|| Error::dim("softmax", "rank-0 input"))?;
        let mut out = vec![0.0; x.numel()];
        for (row, o) in x.data().chunks(n).zip(out.chunks_mut(n)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract("softmax over a fully masked row".into()));
            }
            let mut sum = 0.0;
            for (o, &v) in o.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            o.iter_mut().for_each(|o| *o /= sum);
        }
        self.tape.push(
            "softmax",
            Tensor::from_raw(x.shape().to_vec(), out),
            Op::Softmax(self.id),
            false,
        )
    }

    /// Normalize each last-axis slice to zero mean and unit variance (no affine).
    pub fn layer_norm(&self) -> Result<Var<'t>> {
        let x = self.value();
        let n = *x.shape().last().ok_or_else(|| Error::dim("layer_norm", "rank-0 input"))?;
        let nf = n as f64;
        let mut out = vec![0.0; x.numel()];
        let mut inv_std = Vec::with_capacity(x.numel() / n);
        for (row, o) in x.data().chunks(n).zip(out.chunks_mut(n)) {
            let mean = row.iter().sum::<f64>() / nf;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in o.iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            inv_std.push(s);
        }
        self.tape.push(
            "layer_norm",
            Tensor::from_raw(x.shape().to_vec(), out),
            Op::LayerNorm { a: self.id, inv_std },
            false,
        )
    }

    pub fn sum(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, false)
    }

    pub fn mean(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, true)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Var<'t>> {
        let n = self.value().numel();
        self.reshape(&[n])?.sum(0)
    }

    pub fn mean_all(&self) -> Result<Var<'t>> {
        let n = self.value().numel();
        self.reshape(&[n])?.mean(0)
    }

    fn reduce(&self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let x = self.value();
        let name = if mean { "mean" } else { "sum" };
        if axis >= x.rank() {
            return Err(Error::dim(name, format!("axis {axis} out of range for {:?}", x.shape())));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x.data()[(o * n + k) * inner..][..inner];
                out[o * inner..][..inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let op = if mean {
            Op::Mean { a: self.id, axis }
        } else {
            Op::Sum { a: self.id, axis }
        };
        self.tape.push(name, Tensor::from_raw(shape, out), op, false)
    }

    /// Replace positions where `mask` is true by `value`. `mask` broadcasts
    /// onto the input shape. `value` may be `-inf` (for attention masking).
    pub fn masked_fill(&self, mask: &[bool], mask_shape: &[usize], value: f64) -> Result<Var<'t>> {
        let x = self.value();
        if mask.len() != mask_shape.iter().product::<usize>()
            || broadcast_shapes(mask_shape, x.shape()).as_deref() != Some(x.shape())
        {
            return Err(Error::dim(
                "masked_fill",
                format!("mask {:?} does not broadcast onto {:?}", mask_shape, x.shape()),
            ));
        }
        let full: Vec<bool> = if mask_shape == x.shape() {
            mask.to_vec()
        } else {
            broadcast_offsets(mask_shape, x.shape())
                .into_iter()
                .map(|o| mask[o])
                .collect()
        };
        let data = x
            .data()
            .iter()
            .zip(&full)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        self.tape.push(
            "masked_fill",
            Tensor::from_raw(x.shape().to_vec(), data),
            Op::MaskedFill { a: self.id, mask: full },
            value == f64::NEG_INFINITY,
        )
    }

    /// `max(x, 0)`, realized as a masked fill with a value-dependent mask.
    pub fn relu(&self) -> Result<Var<'t>> {
        let x = self.value();
        let mask: Vec<bool> = x.data().iter().map(|&v| v < 0.0).collect();
        self.masked_fill(&mask, x.shape(), 0.0)
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape();
    if axis >= base.len() {
        return Err(Error::dim("concat", format!("axis {axis} out of range for {:?}", base)));
    }
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let s = v.shape();
        let ok = s.len() == base.len()
            && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::dim("concat", format!("{:?} vs {:?} along axis {axis}", base, s)));
        }
    }
    let (outer, _, inner) = split_axis(base, axis);
    let mut shape = base.to_vec();
    shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for v in &values {
            let chunk = v.shape()[axis] * inner;
            data.extend_from_slice(&v.data()[o * chunk..][..chunk]);
        }
    }
    first.tape.push(
        "concat",
        Tensor::from_raw(shape, data),
        Op::Concat {
            inputs: parts.iter().map(|p| p.id).collect(),
            axis,
        },
        false,
    )
}

/// `x W + b` over the last axis of `x`.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    let ok = ws.len() == 2 && !xs.is_empty() && xs[xs.len() - 1] == ws[0] && bs == [ws[1]];
    if !ok {
        return Err(Error::dim(
            "linear",
            format!("x {:?}, W {:?}, b {:?}", xs, ws, bs),
        ));
    }
    let y = if xs.len() == 1 {
        x.reshape(&[1, xs[0]])?.matmul(w)?.reshape(&[ws[1]])?
    } else {
        x.matmul(w)?
    };
    y.add(b)
}
