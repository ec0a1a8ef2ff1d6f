//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation appends a node to a [`Tape`]. Parents always precede their
//! children, so insertion order is a topological order and [`Tape::backward`]
//! only has to walk the nodes from the loss towards the front.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_CLIP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    AddBias(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    RowScale(Var, Var),
    GateBlend(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Activation(Activation, Var),
    Ste(Var),
    Softmax(Var),
    MaskColumns(Var, Vec<bool>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Element(Var, usize),
    Column(Var, usize),
    Sum(Var),
    BceMean(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf that requires it. Leaves the loss does not depend
    /// on report a zero gradient.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn rows_cols(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::Dimension {
            op,
            left: other.to_vec(),
            right: vec![0, 0],
        }),
    }
}

fn op_parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Binary(_, a, b)
        | Op::AddBias(a, b)
        | Op::ScaleBy(a, b)
        | Op::RowScale(a, b)
        | Op::GateBlend(a, b) => vec![*a, *b],
        Op::Concat { inputs, .. } => inputs.clone(),
        Op::Scale(a, _)
        | Op::Activation(_, a)
        | Op::Ste(a)
        | Op::Softmax(a)
        | Op::MaskColumns(a, _)
        | Op::GatherRows(a, _)
        | Op::Reshape(a)
        | Op::Element(a, _)
        | Op::Column(a, _)
        | Op::Sum(a)
        | Op::BceMean(a, _) => vec![*a],
    }
}

impl Tape {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Indices of the nodes a node was computed from.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        op_parents(&self.nodes[v.0].op)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let parents = op_parents(&op);
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rows_cols(self.value(a), "matmul")?;
        let (k2, n) = rows_cols(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim("elementwise", va.shape(), vb.shape()));
        }
        let data = match kind {
            BinaryKind::Add => va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x + y)
                .collect(),
            BinaryKind::Mul => va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x * y)
                .collect(),
        };
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.value(x), "add_bias")?;
        let vb = self.value(bias);
        if vb.len() != n || vb.shape().len() != 1 {
            return Err(Error::dim("add_bias", self.shape(x), vb.shape()));
        }
        let b = vb.data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(x, b)| *x += b);
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    /// Multiplies `x` by the single value held in `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::dim("scale_by", self.shape(s), &[1]));
        }
        let c = self.value(s).item();
        let value = self.value(x).map(|v| v * c);
        Ok(self.push(value, Op::ScaleBy(s, x)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    /// Scales row `i` of `x: m×n` by `s[i]`, `s: m×1`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.value(x), "row_scale")?;
        if self.value(s).len() != m {
            return Err(Error::dim("row_scale", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).data();
        let mut data = self.value(x).data().to_vec();
        for (row, &c) in data.chunks_exact_mut(n).zip(sv) {
            row.iter_mut().for_each(|v| *v *= c);
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::RowScale(x, s)))
    }

    /// `1 + g·(x − 1)`: `x` when the scalar gate is 1, all ones when it is 0.
    pub fn gate_blend(&mut self, gate: Var, x: Var) -> Result<Var> {
        if !self.value(gate).is_scalar() {
            return Err(Error::dim("gate_blend", self.shape(gate), &[1]));
        }
        let g = self.value(gate).item();
        let value = self.value(x).map(|v| 1.0 + g * (v - 1.0));
        Ok(self.push(value, Op::GateBlend(gate, x)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::EmptyFusion)?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Argument(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut axis_total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Relu => self.value(x).map(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Sigmoid => self.value(x).map(stable_sigmoid),
        };
        self.push(value, Op::Activation(kind, x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Unit step forward (`x > 0` → 1, else 0), identity backward.
    pub fn ste(&mut self, x: Var) -> Var {
        let value = self.value(x).map(step);
        self.push(value, Op::Ste(x))
    }

    /// Softmax along the last axis. `-inf` entries receive exactly zero.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            softmax_in_place(row)?;
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Replaces every column `j` with `keep[j] == false` by `-inf`.
    pub fn mask_columns(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        if keep.len() != n {
            return Err(Error::dim("mask_columns", t.shape(), &[keep.len()]));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, &k) in row.iter_mut().zip(keep) {
                if !k {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MaskColumns(x, keep.to_vec())))
    }

    /// Stacks the selected rows of `table: V×e` into a `len×e` matrix.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(table), "gather_rows")?;
        if indices.is_empty() {
            return Err(Error::Argument(
                "gather_rows needs at least one index".to_string(),
            ));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(vec![indices.len(), cols], data)?;
        Ok(self.push(value, Op::GatherRows(table, indices.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Single flat element of `x`, as a length-1 tensor.
    pub fn element(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        let v = *t.data().get(index).ok_or(Error::Index {
            index,
            size: t.len(),
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Element(x, index)))
    }

    /// Column `j` of `x: m×n` as an `m×1` matrix.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let (m, n) = rows_cols(self.value(x), "column")?;
        if j >= n {
            return Err(Error::Index { index: j, size: n });
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .skip(j)
            .step_by(n)
            .copied()
            .collect();
        let value = Tensor::new(vec![m, 1], data)?;
        Ok(self.push(value, Op::Column(x, j)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels, with
    /// probabilities clamped to `[PROB_CLIP, 1 − PROB_CLIP]`.
    pub fn bce_mean(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        if p.len() != labels.len() {
            return Err(Error::dim("bce_mean", p.shape(), &[labels.len()]));
        }
        if p.data().iter().chain(labels).any(|v| v.is_nan()) {
            return Err(Error::Numeric("bce_mean".to_string()));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| binary_cross_entropy(p, y))
            .sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(value, Op::BceMean(probs, labels.to_vec())))
    }

    /// Propagates d`loss` back to every leaf that requires a gradient.
    ///
    /// A tape may only be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape".to_string(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.wants(*a) {
                    let da = accumulate(&mut grads[a.0], m * k);
                    gemm(m, n, k, &g, false, vb.data(), true, da, true);
                }
                if self.wants(*b) {
                    let db = accumulate(&mut grads[b.0], k * n);
                    gemm(k, m, n, va.data(), true, &g, false, db, true);
                }
            }
            Op::Binary(kind, a, b) => match kind {
                BinaryKind::Add => {
                    if self.wants(*a) && self.wants(*b) {
                        accumulate_owned(&mut grads[a.0], g.clone());
                        accumulate_owned(&mut grads[b.0], g);
                    } else if self.wants(*a) {
                        accumulate_owned(&mut grads[a.0], g);
                    } else if self.wants(*b) {
                        accumulate_owned(&mut grads[b.0], g);
                    }
                }
                BinaryKind::Mul => {
                    if self.wants(*a) {
                        let vb = self.value(*b).data();
                        let da = accumulate(&mut grads[a.0], g.len());
                        for ((d, g), y) in da.iter_mut().zip(&g).zip(vb) {
                            *d += g * y;
                        }
                    }
                    if self.wants(*b) {
                        let va = self.value(*a).data();
                        let db = accumulate(&mut grads[b.0], g.len());
                        for ((d, g), x) in db.iter_mut().zip(&g).zip(va) {
                            *d += g * x;
                        }
                    }
                }
            },
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                if self.wants(*bias) {
                    let db = accumulate(&mut grads[bias.0], n);
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
                if self.wants(*x) {
                    accumulate_owned(&mut grads[x.0], g);
                }
            }
            Op::ScaleBy(s, x) => {
                if self.wants(*s) {
                    let dot: f64 = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    accumulate(&mut grads[s.0], 1)[0] += dot;
                }
                if self.wants(*x) {
                    let c = self.value(*s).item();
                    let dx = accumulate(&mut grads[x.0], g.len());
                    dx.iter_mut().zip(&g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    let dx = accumulate(&mut grads[x.0], g.len());
                    dx.iter_mut().zip(&g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::RowScale(x, s) => {
                let vx = self.value(*x);
                let n = vx.shape()[1];
                let vs = self.value(*s).data();
                if self.wants(*s) {
                    let ds = accumulate(&mut grads[s.0], vs.len());
                    for ((d, grow), xrow) in ds
                        .iter_mut()
                        .zip(g.chunks_exact(n))
                        .zip(vx.data().chunks_exact(n))
                    {
                        *d += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if self.wants(*x) {
                    let dx = accumulate(&mut grads[x.0], g.len());
                    for ((drow, grow), &c) in dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(vs)
                    {
                        drow.iter_mut().zip(grow).for_each(|(d, g)| *d += c * g);
                    }
                }
            }
            Op::GateBlend(gate, x) => {
                if self.wants(*gate) {
                    let s: f64 = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, v)| g * (v - 1.0))
                        .sum();
                    accumulate(&mut grads[gate.0], 1)[0] += s;
                }
                if self.wants(*x) {
                    let c = self.value(*gate).item();
                    let dx = accumulate(&mut grads[x.0], g.len());
                    dx.iter_mut().zip(&g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let chunk = self.shape(*v)[*axis] * inner;
                    if self.wants(*v) {
                        let dv = accumulate(&mut grads[v.0], outer * chunk);
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            dv[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Activation(kind, x) => {
                if self.wants(*x) {
                    let dx = accumulate(&mut grads[x.0], g.len());
                    match kind {
                        Activation::Relu => {
                            for ((d, g), v) in dx.iter_mut().zip(&g).zip(self.value(*x).data()) {
                                if *v > 0.0 {
                                    *d += g;
                                }
                            }
                        }
                        Activation::Sigmoid => {
                            for ((d, g), y) in dx.iter_mut().zip(&g).zip(node.value.data()) {
                                *d += g * y * (1.0 - y);
                            }
                        }
                    }
                }
            }
            Op::Ste(x) | Op::Reshape(x) => {
                if self.wants(*x) {
                    accumulate_owned(&mut grads[x.0], g);
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let n = *node.value.shape().last().unwrap_or(&1);
                    let dx = accumulate(&mut grads[x.0], g.len());
                    for ((drow, grow), yrow) in dx
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(y.chunks_exact(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (g - dot);
                        }
                    }
                }
            }
            Op::MaskColumns(x, keep) => {
                if self.wants(*x) {
                    let n = keep.len();
                    let dx = accumulate(&mut grads[x.0], g.len());
                    for (drow, grow) in dx.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                        for ((d, g), &k) in drow.iter_mut().zip(grow).zip(keep) {
                            if k {
                                *d += g;
                            }
                        }
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                if self.wants(*table) {
                    let t = self.value(*table);
                    let cols = t.shape()[1];
                    let dt = accumulate(&mut grads[table.0], t.len());
                    for (r, &i) in indices.iter().enumerate() {
                        dt[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Element(x, index) => {
                if self.wants(*x) {
                    let len = self.value(*x).len();
                    accumulate(&mut grads[x.0], len)[*index] += g[0];
                }
            }
            Op::Column(x, j) => {
                if self.wants(*x) {
                    let t = self.value(*x);
                    let n = t.shape()[1];
                    let dx = accumulate(&mut grads[x.0], t.len());
                    for (i, gi) in g.iter().enumerate() {
                        dx[i * n + j] += gi;
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let dx = accumulate(&mut grads[x.0], self.value(*x).len());
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::BceMean(p, labels) => {
                if self.wants(*p) {
                    let scale = g[0] / labels.len() as f64;
                    let dp = accumulate(&mut grads[p.0], labels.len());
                    for ((d, &p), &y) in dp.iter_mut().zip(self.value(*p).data()).zip(labels) {
                        if p > PROB_CLIP && p < 1.0 - PROB_CLIP {
                            *d += scale * (p - y) / (p * (1.0 - p));
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Logistic function evaluated without overflow for large `|x|`.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Clamped cross-entropy of a single prediction.
pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    if row.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax".into()));
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateMask);
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            libm::exp(*v - max)
        };
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
    Ok(())
}
