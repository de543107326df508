//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation evaluates its
//! value eagerly and records its parents, so node order is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Graphs are rebuilt for every forward pass and are confined to one thread.

use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose vector-Jacobian product is supplied by the caller.
///
/// Used for small fused kernels (rotation conversions, forward kinematics)
/// that would otherwise expand into hundreds of scalar-sized nodes.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradients for each input given the gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Mean(Var),
    SquaredNorm(Var),
    Custom(Arc<dyn CustomOp>, Vec<Var>),
}

impl Op {
    fn tag(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SquaredNorm(..) => "squared_norm",
            Op::Custom(op, _) => op.name(),
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::Slice(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SquaredNorm(a) => vec![*a],
            Op::Concat(vs) | Op::Custom(_, vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &str, shapes: &[(usize, usize)]) -> Error {
    let listed: Vec<String> = shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect();
    Error::Shape(format!("{op} on {}", listed.join(", ")))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn op_tag(&self, v: Var) -> &str {
        self.nodes[v.0].op.tag()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, &[sa, sb]));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `scale * a + offset`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, offset: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + offset);
        let rg = self.nodes[a.0].requires_grad;
        self.push_with(v, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds a `1 × c` row to every row of an `n × c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.value(x).shape(), self.value(row).shape());
        if rs.0 != 1 || rs.1 != xs.1 {
            return Err(shape_err("add_row", &[xs, rs]));
        }
        let mut v = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..xs.0 {
            for (a, b) in v.row_slice_mut(i).iter_mut().zip(&r) {
                *a += b;
            }
        }
        Ok(self.push(v, Op::AddRow(x, row)))
    }

    /// Scales row `i` of an `n × c` matrix by entry `i` of an `n × 1` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xs, cs) = (self.value(x).shape(), self.value(col).shape());
        if cs.1 != 1 || cs.0 != xs.0 {
            return Err(shape_err("mul_col", &[xs, cs]));
        }
        let mut v = self.value(x).clone();
        for i in 0..xs.0 {
            let s = self.value(col).data()[i];
            for a in v.row_slice_mut(i) {
                *a *= s;
            }
        }
        Ok(self.push(v, Op::MulCol(x, col)))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..x.rows() {
            let row = v.row_slice_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        self.push(v, Op::Softmax(a))
    }

    /// Concatenation along columns; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            let shapes: Vec<_> = parts.iter().map(|p| self.value(*p).shape()).collect();
            return Err(shape_err("concat", &shapes));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row_slice(i);
                v.row_slice_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Columns `[start, end)`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::Shape(format!(
                "slice [{start}, {end}) of {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        let v = Tensor::from_fn(x.rows(), end - start, |i, j| x.get(i, start + j));
        Ok(self.push(v, Op::Slice(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let v = Tensor::scalar(self.value(a).sum() / n as f64);
        Ok(self.push(v, Op::Mean(a)))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).squared_norm());
        self.push(v, Op::SquaredNorm(a))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&vals)?;
        Ok(self.push(out, Op::Custom(op, inputs.to_vec())))
    }

    /// Whether `output` is reachable from `input` through recorded edges.
    pub fn depends_on(&self, output: Var, input: Var) -> bool {
        if input.0 > output.0 {
            return false;
        }
        let mut seen = vec![false; output.0 + 1];
        let mut stack = vec![output];
        while let Some(v) = stack.pop() {
            if v == input {
                return true;
            }
            if std::mem::replace(&mut seen[v.0], true) {
                continue;
            }
            stack.extend(
                self.nodes[v.0]
                    .op
                    .parents()
                    .into_iter()
                    .filter(|p| p.0 >= input.0),
            );
        }
        false
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, found {}x{}",
                rv.rows(),
                rv.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
                }
            }
            Op::Affine(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    gemm(false, g, true, vb, &mut ga, 0.0);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                    gemm(true, va, false, g, &mut gb, 0.0);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (a, b) in gr.data_mut().iter_mut().zip(g.row_slice(i)) {
                            *a += b;
                        }
                    }
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::MulCol(x, col) => {
                let (vx, vc) = (self.value(*x), self.value(*col));
                if self.requires_grad(*x) {
                    let mut gx = g.clone();
                    for i in 0..g.rows() {
                        let s = vc.data()[i];
                        gx.row_slice_mut(i).iter_mut().for_each(|e| *e *= s);
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*col) {
                    let gc = Tensor::from_fn(g.rows(), 1, |i, _| {
                        g.row_slice(i)
                            .iter()
                            .zip(vx.row_slice(i))
                            .map(|(a, b)| a * b)
                            .sum()
                    });
                    self.accumulate(grads, *col, gc);
                }
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gi, s| gi * s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gi, t| gi * (1.0 - t * t)));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::Softmax(a) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (j, out) in gx.row_slice_mut(i).iter_mut().enumerate() {
                        *out = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        let gp = Tensor::from_fn(g.rows(), cols, |i, j| g.get(i, off + j));
                        self.accumulate(grads, *p, gp);
                    }
                    off += cols;
                }
            }
            Op::Slice(a, start) => {
                let x = self.value(*a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for i in 0..g.rows() {
                    gx.row_slice_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row_slice(i));
                }
                self.accumulate(grads, *a, gx);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(x.rows(), x.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let s = g.data()[0] / x.len() as f64;
                self.accumulate(grads, *a, Tensor::full(x.rows(), x.cols(), s));
            }
            Op::SquaredNorm(a) => {
                let s = 2.0 * g.data()[0];
                self.accumulate(grads, *a, self.value(*a).scale(s));
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&vals, y, g);
                for (v, gv) in inputs.iter().zip(gs) {
                    self.accumulate(grads, *v, gv);
                }
            }
        }
    }
}
