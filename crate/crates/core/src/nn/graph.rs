//! Eager reverse-mode differentiation over a small fixed op set.
//!
//! Nodes are evaluated when they are created and stored in creation order,
//! which is already a topological order, so `backward` is a single reverse
//! sweep. Values are row-major matrices; vectors are
//! `n x 1` columns.

use std::borrow::Cow;

use super::tensor::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Probabilities below this are clamped before `ln`.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    Gather { table: NodeId, row: usize },
    Pick { src: NodeId, index: usize },
    Sum(Vec<NodeId>),
}

#[derive(Debug)]
struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max subtraction, f64 accumulation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Cow<'a, [f64]>, op: Op) -> NodeId {
        debug_assert_eq!(rows * cols, value.len());
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::Gather { table: a, .. }
            | Op::Pick { src: a, .. } => self.nodes[a.0].requires_grad,
            Op::Concat(xs) | Op::Sum(xs) => xs.iter().any(|x| self.nodes[x.0].requires_grad),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<NodeId> {
        if rows * cols != value.len() {
            return Err(Error::dims(format!(
                "constant of shape {rows}x{cols} given {} values",
                value.len()
            )));
        }
        Ok(self.push(rows, cols, Cow::Owned(value), Op::Constant))
    }

    /// A column-vector constant that borrows its data.
    pub fn constant_slice(&mut self, value: &'a [f64]) -> NodeId {
        self.push(value.len(), 1, Cow::Borrowed(value), Op::Constant)
    }

    /// Binds a parameter tensor into the graph without copying it.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> NodeId {
        let t = store.get(id);
        let (rows, cols) = t.matrix_shape();
        self.push(rows, cols, Cow::Borrowed(&t.data), Op::Param(id))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dims(format!("{what}: shapes {sa:?} and {sb:?}")));
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        if k != k2 {
            return Err(Error::dims(format!(
                "matmul of {r}x{k} by {k2}x{c}"
            )));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; r * c];
        if c == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                let row = &av[i * k..(i + 1) * k];
                *o = row.iter().zip(bv).map(|(x, y)| x * y).sum();
            }
        } else {
            for i in 0..r {
                for t in 0..k {
                    let x = av[i * k + t];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[t * c..(t + 1) * c];
                    for (o, y) in out[i * c..(i + 1) * c].iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
            }
        }
        Ok(self.push(r, c, Cow::Owned(out), Op::MatMul(a, b)))
    }

    fn zip_op(&mut self, a: NodeId, b: NodeId, what: &str, f: fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.push(r, c, Cow::Owned(out), op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map_op(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(r, c, Cow::Owned(out), op)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.map_op(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, f64::tanh, Op::Tanh(a))
    }

    /// `ln(max(x, 1e-12))`; the clamped region has zero gradient.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, |x| x.max(LOG_CLAMP).ln(), Op::Log(a))
    }

    /// Softmax over every entry of the node.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out = softmax(self.value(a));
        self.push(r, c, Cow::Owned(out), Op::Softmax(a))
    }

    /// Stacks nodes with equal column counts vertically.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::dims("concat of nothing"));
        };
        let cols = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::dims(format!("concat column counts {cols} and {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(rows, cols, Cow::Owned(out), Op::Concat(parts.to_vec())))
    }

    /// Row `row` of a matrix node, as a column vector.
    pub fn gather(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let (r, c) = self.shape(table);
        if row >= r {
            return Err(Error::dims(format!("gather row {row} of {r}-row table")));
        }
        let out = self.value(table)[row * c..(row + 1) * c].to_vec();
        Ok(self.push(c, 1, Cow::Owned(out), Op::Gather { table, row }))
    }

    /// Single entry as a 1x1 node.
    pub fn pick(&mut self, src: NodeId, index: usize) -> Result<NodeId> {
        let v = self
            .value(src)
            .get(index)
            .copied()
            .ok_or_else(|| Error::dims(format!("pick index {index} out of range")))?;
        Ok(self.push(1, 1, Cow::Owned(vec![v]), Op::Pick { src, index }))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::dims("sum of nothing"));
        };
        let shape = self.shape(first);
        let mut out = vec![0.0; shape.0 * shape.1];
        for &p in parts {
            if self.shape(p) != shape {
                return Err(Error::dims("sum of differently shaped nodes"));
            }
            for (o, x) in out.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        Ok(self.push(shape.0, shape.1, Cow::Owned(out), Op::Sum(parts.to_vec())))
    }

    /// Reverse sweep from a scalar node. Returns d(loss)/d(param) for every
    /// parameter reachable from `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::dims(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |id: NodeId, f: &dyn Fn(&mut [f64])| {
                let n = &self.nodes[id.0];
                if !n.requires_grad {
                    return;
                }
                let buf = grads[id.0].get_or_insert_with(|| vec![0.0; n.rows * n.cols]);
                f(buf);
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => out.add(*pid, g),
                Op::MatMul(a, b) => {
                    let (r, k) = self.shape(*a);
                    let c = node.cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &|ga| {
                        for i in 0..r {
                            let grow = &g[i * c..(i + 1) * c];
                            for t in 0..k {
                                let brow = &bv[t * c..(t + 1) * c];
                                ga[i * k + t] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    acc(*b, &|gb| {
                        for i in 0..r {
                            let grow = &g[i * c..(i + 1) * c];
                            for t in 0..k {
                                let x = av[i * k + t];
                                for (o, y) in gb[t * c..(t + 1) * c].iter_mut().zip(grow) {
                                    *o += x * y;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &|ga| ga.iter_mut().zip(&g).for_each(|(o, x)| *o += x));
                    acc(*b, &|gb| gb.iter_mut().zip(&g).for_each(|(o, x)| *o += x));
                }
                Op::Sub(a, b) => {
                    acc(*a, &|ga| ga.iter_mut().zip(&g).for_each(|(o, x)| *o += x));
                    acc(*b, &|gb| gb.iter_mut().zip(&g).for_each(|(o, x)| *o -= x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &|ga| {
                        for ((o, x), y) in ga.iter_mut().zip(&g).zip(bv.iter()) {
                            *o += x * y;
                        }
                    });
                    acc(*b, &|gb| {
                        for ((o, x), y) in gb.iter_mut().zip(&g).zip(av.iter()) {
                            *o += x * y;
                        }
                    });
                }
                Op::Scale(a, f) => acc(*a, &|ga| ga.iter_mut().zip(&g).for_each(|(o, x)| *o += f * x)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &|ga| {
                        for ((o, x), s) in ga.iter_mut().zip(&g).zip(y.iter()) {
                            *o += x * s * (1.0 - s);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &|ga| {
                        for ((o, x), t) in ga.iter_mut().zip(&g).zip(y.iter()) {
                            *o += x * (1.0 - t * t);
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y.iter()).map(|(x, p)| x * p).sum();
                    acc(*a, &|ga| {
                        for ((o, x), p) in ga.iter_mut().zip(&g).zip(y.iter()) {
                            *o += p * (x - dot);
                        }
                    });
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    acc(*a, &|ga| {
                        for ((o, x), v) in ga.iter_mut().zip(&g).zip(av.iter()) {
                            if *v > LOG_CLAMP {
                                *o += x / v;
                            }
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let slice = &g[offset..offset + len];
                        acc(*p, &|gp| gp.iter_mut().zip(slice).for_each(|(o, x)| *o += x));
                        offset += len;
                    }
                }
                Op::Gather { table, row } => {
                    let c = self.shape(*table).1;
                    acc(*table, &|gt| {
                        gt[row * c..(row + 1) * c]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(o, x)| *o += x)
                    });
                }
                Op::Pick { src, index } => acc(*src, &|gs| gs[*index] += g[0]),
                Op::Sum(parts) => {
                    for p in parts {
                        acc(*p, &|gp| gp.iter_mut().zip(&g).for_each(|(o, x)| *o += x));
                    }
                }
            }
        }
        Ok(out)
    }
}
