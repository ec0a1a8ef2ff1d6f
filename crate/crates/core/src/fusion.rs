//! The fusion search space.
//!
//! Components are ranked by level; a connection `i → j` may exist only when
//! `level(i) < level(j)`, which keeps every architecture acyclic. Each
//! fusion-capable component (everything except the embedding) aggregates its
//! gated predecessors with one of four operations, or with a softmax-weighted
//! mixture of all of them while searching.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::components::glorot;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionOp {
    Add,
    Prod,
    Concat,
    Att,
}

impl FusionOp {
    /// Canonical order; also the tie-break order for argmax.
    pub const ALL: [FusionOp; 4] = [
        FusionOp::Add,
        FusionOp::Prod,
        FusionOp::Concat,
        FusionOp::Att,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionOp::Add => "ADD",
            FusionOp::Prod => "PROD",
            FusionOp::Concat => "CONCAT",
            FusionOp::Att => "ATT",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-empty subset of [`FusionOp::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpSet(u8);

impl OpSet {
    pub fn all() -> Self {
        OpSet(0b1111)
    }

    pub fn from_ops(ops: &[FusionOp]) -> Result<Self> {
        let bits = ops.iter().fold(0u8, |acc, op| acc | (1 << op.index()));
        if bits == 0 {
            return Err(Error::Argument("operation set must not be empty".into()));
        }
        Ok(OpSet(bits))
    }

    pub fn contains(self, op: FusionOp) -> bool {
        self.0 & (1 << op.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = FusionOp> {
        FusionOp::ALL
            .into_iter()
            .filter(move |op| self.contains(*op))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn mask(self) -> [bool; 4] {
        FusionOp::ALL.map(|op| self.contains(op))
    }
}

impl Default for OpSet {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    Embedding,
    Cross,
    Deep,
    Output,
}

impl ComponentKind {
    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Embedding => "embedding",
            ComponentKind::Cross => "cross",
            ComponentKind::Deep => "deep",
            ComponentKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: usize,
    pub kind: ComponentKind,
    pub level: usize,
    pub name: String,
}

/// Ordered components: `E`, optional `S0`, then `S_i`, `D_i` for each level,
/// then the output `H`. Ids are sorted by level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentGraph {
    n: usize,
    with_s0: bool,
    components: Vec<Component>,
}

impl ComponentGraph {
    pub fn new(n: usize, with_s0: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("n must be at least 1".into()));
        }
        let mut components = Vec::with_capacity(2 * n + 3);
        let mut push = |kind, level, name: String| {
            let id = components.len();
            components.push(Component {
                id,
                kind,
                level,
                name,
            });
        };
        push(ComponentKind::Embedding, 0, "E".into());
        let offset = usize::from(with_s0);
        if with_s0 {
            push(ComponentKind::Cross, 1, "S0".into());
        }
        for i in 1..=n {
            push(ComponentKind::Cross, i + offset, format!("S{i}"));
            push(ComponentKind::Deep, i + offset, format!("D{i}"));
        }
        push(ComponentKind::Output, n + offset + 1, "H".into());
        Ok(ComponentGraph {
            n,
            with_s0,
            components,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn with_s0(&self) -> bool {
        self.with_s0
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, id: usize) -> &Component {
        &self.components[id]
    }

    pub fn level(&self, id: usize) -> usize {
        self.components[id].level
    }

    pub fn embedding(&self) -> usize {
        0
    }

    pub fn output(&self) -> usize {
        self.components.len() - 1
    }

    pub fn s0(&self) -> Option<usize> {
        self.with_s0.then_some(1)
    }

    /// Id of `S_i`, `1 ≤ i ≤ n`.
    pub fn shallow(&self, i: usize) -> usize {
        assert!((1..=self.n).contains(&i));
        usize::from(self.with_s0) + 2 * i - 1
    }

    /// Id of `D_i`, `1 ≤ i ≤ n`.
    pub fn deep(&self, i: usize) -> usize {
        self.shallow(i) + 1
    }

    pub fn by_name(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    /// Whether an edge `from → to` respects the level order.
    pub fn allows(&self, from: usize, to: usize) -> bool {
        from < self.len() && to < self.len() && self.level(from) < self.level(to)
    }

    /// All components that may feed `to`, in id order. The position in this
    /// list is the component's input slot.
    pub fn predecessors(&self, to: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.allows(i, to)).collect()
    }

    pub fn slot_of(&self, from: usize, to: usize) -> Option<usize> {
        self.predecessors(to).iter().position(|&i| i == from)
    }

    pub fn valid_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for to in 0..self.len() {
            for from in self.predecessors(to) {
                edges.push((from, to));
            }
        }
        edges.sort_unstable();
        edges
    }

    /// Ids of the components that own a fusion operation.
    pub fn fusion_capable(&self) -> core::ops::Range<usize> {
        1..self.len()
    }

    pub fn num_fusion_capable(&self) -> usize {
        self.len() - 1
    }

    /// Column of a component in the operation parameter matrix.
    pub fn fusion_column(&self, id: usize) -> Option<usize> {
        (id >= 1 && id < self.len()).then(|| id - 1)
    }
}

/// Number of level-respecting component pairs.
pub fn count_valid_connections(n: usize, with_s0: bool) -> Result<u64> {
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let n = n as u64;
    let base = 2 * n * n + 2 * n + 1;
    // S0 adds E → S0 and S0 → every one of the 2n + 1 components above it.
    Ok(if with_s0 { base + 1 + 2 * n + 1 } else { base })
}

/// `2^(2n²+2n+1) · k^(2n+1)`: connection patterns times operation choices.
pub fn search_space_size(n: usize, k: usize) -> Result<BigUint> {
    if n == 0 || k == 0 {
        return Err(Error::Argument(format!(
            "search space needs n ≥ 1 and k ≥ 1, got n = {n}, k = {k}"
        )));
    }
    let edges = count_valid_connections(n, false)?;
    let patterns = BigUint::from(1u8) << edges;
    let ops = BigUint::from(k).pow((2 * n + 1) as u32);
    Ok(patterns * ops)
}

/// Connection logits over all component pairs, with the level mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionParams {
    size: usize,
    alpha: Vec<f64>,
    mask: Vec<bool>,
}

/// Initial value of every admissible connection logit.
pub const ALPHA_INIT: f64 = 0.5;

impl ConnectionParams {
    pub fn init(graph: &ComponentGraph) -> Self {
        let size = graph.len();
        let mut mask = vec![false; size * size];
        let mut alpha = vec![0.0; size * size];
        for (i, j) in graph.valid_edges() {
            mask[i * size + j] = true;
            alpha[i * size + j] = ALPHA_INIT;
        }
        ConnectionParams { size, alpha, mask }
    }

    /// Takes the admissible entries from a dense `size × size` array; the
    /// others are ignored and stored as zero.
    pub fn from_dense(graph: &ComponentGraph, values: &[f64]) -> Result<Self> {
        let mut params = Self::init(graph);
        if values.len() != params.alpha.len() {
            return Err(Error::dim(
                "connection params",
                &[params.size, params.size],
                &[values.len()],
            ));
        }
        for (k, v) in values.iter().enumerate() {
            params.alpha[k] = if params.mask[k] { *v } else { 0.0 };
        }
        Ok(params)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_admissible(&self, from: usize, to: usize) -> bool {
        from < self.size && to < self.size && self.mask[from * self.size + to]
    }

    pub fn get(&self, from: usize, to: usize) -> Result<f64> {
        if !self.is_admissible(from, to) {
            return Err(Error::Contract(format!(
                "connection {from} -> {to} is outside the level mask"
            )));
        }
        Ok(self.alpha[from * self.size + to])
    }

    pub fn set(&mut self, from: usize, to: usize, value: f64) -> Result<()> {
        if !self.is_admissible(from, to) {
            return Err(Error::Contract(format!(
                "connection {from} -> {to} is outside the level mask"
            )));
        }
        self.alpha[from * self.size + to] = value;
        Ok(())
    }

    /// Dense `size × size` values; inadmissible entries hold zero.
    pub fn dense(&self) -> &[f64] {
        &self.alpha
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.size, self.size, self.alpha.clone()).expect("square")
    }

    /// Admissible `(from, to, alpha)` triples in edge order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for j in 0..self.size {
                if self.mask[i * self.size + j] {
                    out.push((i, j, self.alpha[i * self.size + j]));
                }
            }
        }
        out
    }
}

/// STE gate on connection `from → to`, read from the dense connection
/// tensor bound on the tape.
pub fn gate(
    tape: &mut Tape,
    alpha: Var,
    graph: &ComponentGraph,
    from: usize,
    to: usize,
) -> Result<Var> {
    if !graph.allows(from, to) {
        return Err(Error::Contract(format!(
            "connection {from} -> {to} is outside the level mask"
        )));
    }
    let entry = tape.element(alpha, from * graph.len() + to)?;
    Ok(tape.ste(entry))
}

/// Operation logits, one column of four per fusion-capable component.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationParams {
    columns: usize,
    /// `4 × columns`, row-major.
    beta: Vec<f64>,
}

impl OperationParams {
    pub fn init(graph: &ComponentGraph) -> Self {
        let columns = graph.num_fusion_capable();
        OperationParams {
            columns,
            beta: vec![0.0; FusionOp::ALL.len() * columns],
        }
    }

    pub fn from_dense(graph: &ComponentGraph, values: &[f64]) -> Result<Self> {
        let mut params = Self::init(graph);
        if values.len() != params.beta.len() {
            return Err(Error::dim(
                "operation params",
                &[4, params.columns],
                &[values.len()],
            ));
        }
        params.beta.copy_from_slice(values);
        Ok(params)
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn column(&self, col: usize) -> [f64; 4] {
        core::array::from_fn(|o| self.beta[o * self.columns + col])
    }

    pub fn set_column(&mut self, col: usize, values: [f64; 4]) {
        for (o, v) in values.into_iter().enumerate() {
            self.beta[o * self.columns + col] = v;
        }
    }

    /// Softmax of a column over the operations in `ops`; the rest get 0.
    pub fn probabilities(&self, col: usize, ops: OpSet) -> [f64; 4] {
        masked_softmax(self.column(col), ops)
    }

    pub fn dense(&self) -> &[f64] {
        &self.beta
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(4, self.columns, self.beta.clone()).expect("non-empty")
    }
}

pub(crate) fn masked_softmax(logits: [f64; 4], ops: OpSet) -> [f64; 4] {
    let mut row: [f64; 4] = core::array::from_fn(|o| {
        if ops.contains(FusionOp::ALL[o]) {
            logits[o]
        } else {
            f64::NEG_INFINITY
        }
    });
    crate::autodiff::softmax_in_place(&mut row).expect("operation set is never empty");
    row
}

/// Weights owned by one component's CONCAT and ATT operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionParams {
    /// Number of predecessor slots.
    pub slots: usize,
    /// `(slots · d) × d`; block `i` multiplies slot `i`.
    pub concat_w: ParamId,
    /// `d × d`
    pub att_w1: ParamId,
    /// `d`
    pub att_b1: ParamId,
    /// `d × 1`
    pub att_w2: ParamId,
}

impl FusionParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        slots: usize,
        d: usize,
        prefix: &str,
    ) -> Self {
        let concat_w = store.add(
            format!("{prefix}.concat.w"),
            ParamGroup::Model,
            glorot(rng, slots * d, d),
        );
        let att_w1 = store.add(
            format!("{prefix}.att.w1"),
            ParamGroup::Model,
            glorot(rng, d, d),
        );
        let att_b1 = store.add(
            format!("{prefix}.att.b1"),
            ParamGroup::Model,
            Tensor::zeros(&[d]),
        );
        let att_w2 = store.add(
            format!("{prefix}.att.w2"),
            ParamGroup::Model,
            glorot(rng, d, 1),
        );
        FusionParams {
            slots,
            concat_w,
            att_w1,
            att_b1,
            att_w2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    /// Fixed connection.
    Open,
    /// Fixed disconnection; the input is left out entirely.
    Closed,
    /// Learned gate whose forward value is 0 or 1.
    Learned { var: Var, value: f64 },
}

impl Gate {
    pub fn value(self) -> f64 {
        match self {
            Gate::Open => 1.0,
            Gate::Closed => 0.0,
            Gate::Learned { value, .. } => value,
        }
    }
}

/// Predecessor outputs of one component, one per slot, with their gates.
pub struct FusionInputs {
    rows: usize,
    dim: usize,
    slots: Vec<Slot>,
}

struct Slot {
    gate: Gate,
    raw: Option<Var>,
    /// `g · e`, absent for closed slots.
    gated: Option<Var>,
}

impl FusionInputs {
    /// `inputs[i]` is the output feeding slot `i`, `None` for closed slots
    /// whose source was never computed.
    pub fn new(
        tape: &mut Tape,
        inputs: &[(Gate, Option<Var>)],
        rows: usize,
        dim: usize,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyFusion);
        }
        let mut slots = Vec::with_capacity(inputs.len());
        for &(gate, raw) in inputs {
            let raw = match (gate, raw) {
                (_, Some(v)) => v,
                (Gate::Closed, None) => {
                    slots.push(Slot {
                        gate,
                        raw: None,
                        gated: None,
                    });
                    continue;
                }
                (_, None) => {
                    return Err(Error::Contract("open fusion slot without an input".into()));
                }
            };
            let shape = tape.shape(raw);
            if shape != [rows, dim] {
                return Err(Error::dim("fuse", &[rows, dim], shape));
            }
            let gated = match gate {
                Gate::Open => Some(raw),
                Gate::Closed => None,
                Gate::Learned { var, .. } => Some(tape.scale_by(var, raw)?),
            };
            slots.push(Slot {
                gate,
                raw: Some(raw),
                gated,
            });
        }
        Ok(FusionInputs { rows, dim, slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn zeros(&self, tape: &mut Tape) -> Var {
        tape.constant(Tensor::zeros(&[self.rows, self.dim]))
    }
}

/// Fuses the gated inputs of one component with a single operation.
///
/// Disconnected inputs are absent rather than zero: ADD sums the connected
/// ones, PROD multiplies `1 + g·(e − 1)` so a closed gate contributes the
/// multiplicative identity, CONCAT zeroes the closed slots, and ATT masks
/// them out of the softmax. With every gate closed ADD, CONCAT and ATT give
/// zeros and PROD gives ones.
pub fn fuse(
    sess: &mut Session<'_>,
    kind: FusionOp,
    params: Option<&FusionParams>,
    inputs: &FusionInputs,
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::EmptyFusion);
    }
    match kind {
        FusionOp::Add => {
            let mut acc: Option<Var> = None;
            for x in inputs.slots.iter().filter_map(|s| s.gated) {
                acc = Some(match acc {
                    Some(a) => sess.tape.add(a, x)?,
                    None => x,
                });
            }
            Ok(acc.unwrap_or_else(|| inputs.zeros(&mut sess.tape)))
        }
        FusionOp::Prod => {
            let mut acc: Option<Var> = None;
            for slot in &inputs.slots {
                let (gate, Some(raw)) = (slot.gate, slot.raw) else {
                    continue;
                };
                let term = match gate {
                    Gate::Closed => continue,
                    Gate::Open => raw,
                    Gate::Learned { var, .. } => sess.tape.gate_blend(var, raw)?,
                };
                acc = Some(match acc {
                    Some(a) => sess.tape.mul(a, term)?,
                    None => term,
                });
            }
            Ok(acc.unwrap_or_else(|| {
                sess.tape
                    .constant(Tensor::full(&[inputs.rows, inputs.dim], 1.0))
            }))
        }
        FusionOp::Concat => {
            let params =
                params.ok_or_else(|| Error::Contract("CONCAT needs its weights".into()))?;
            if params.slots != inputs.len() {
                return Err(Error::dim(
                    "concat fusion",
                    &[params.slots],
                    &[inputs.len()],
                ));
            }
            let active: Vec<(usize, Var)> = inputs
                .slots
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.gated.map(|v| (i, v)))
                .collect();
            if active.is_empty() {
                return Ok(inputs.zeros(&mut sess.tape));
            }
            let xs: Vec<Var> = active.iter().map(|(_, v)| *v).collect();
            let stacked = sess.tape.concat(&xs, 1)?;
            let w = sess.param(params.concat_w);
            let w = if active.len() == params.slots {
                w
            } else {
                let d = inputs.dim;
                let rows: Vec<usize> = active
                    .iter()
                    .flat_map(|(slot, _)| slot * d..(slot + 1) * d)
                    .collect();
                sess.tape.gather_rows(w, &rows)?
            };
            sess.tape.matmul(stacked, w)
        }
        FusionOp::Att => {
            let params = params.ok_or_else(|| Error::Contract("ATT needs its weights".into()))?;
            match attention_weights(sess, params, inputs)? {
                None => Ok(inputs.zeros(&mut sess.tape)),
                Some((coefficients, members)) => {
                    let mut acc: Option<Var> = None;
                    for (col, (_, x, kept)) in members.iter().enumerate() {
                        if !kept {
                            continue;
                        }
                        let a = sess.tape.column(coefficients, col)?;
                        let term = sess.tape.row_scale(*x, a)?;
                        acc = Some(match acc {
                            Some(s) => sess.tape.add(s, term)?,
                            None => term,
                        });
                    }
                    Ok(acc.expect("at least one kept input"))
                }
            }
        }
    }
}

type AttentionMembers = Vec<(usize, Var, bool)>;

/// Softmax attention over the non-closed inputs; `None` if every gate is 0.
fn attention_weights(
    sess: &mut Session<'_>,
    params: &FusionParams,
    inputs: &FusionInputs,
) -> Result<Option<(Var, AttentionMembers)>> {
    let members: AttentionMembers = inputs
        .slots
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.gated.map(|v| (i, v, s.gate.value() > 0.0)))
        .collect();
    if !members.iter().any(|m| m.2) {
        return Ok(None);
    }
    let w1 = sess.param(params.att_w1);
    let b1 = sess.param(params.att_b1);
    let w2 = sess.param(params.att_w2);
    let mut logits = Vec::with_capacity(members.len());
    for (_, x, _) in &members {
        let h = sess.tape.matmul(*x, w1)?;
        let h = sess.tape.add_bias(h, b1)?;
        let h = sess.tape.relu(h);
        logits.push(sess.tape.matmul(h, w2)?);
    }
    let mut stacked = sess.tape.concat(&logits, 1)?;
    let keep: Vec<bool> = members.iter().map(|m| m.2).collect();
    if keep.iter().any(|k| !k) {
        stacked = sess.tape.mask_columns(stacked, &keep)?;
    }
    let coefficients = sess.tape.softmax(stacked)?;
    Ok(Some((coefficients, members)))
}

/// Attention coefficients per slot and row (`rows × slots`, zero on
/// gated-out slots). Fails with [`Error::DegenerateMask`] when every input
/// is gated out.
pub fn attention_coefficients(
    sess: &mut Session<'_>,
    params: &FusionParams,
    inputs: &FusionInputs,
) -> Result<Tensor> {
    let (coefficients, members) =
        attention_weights(sess, params, inputs)?.ok_or(Error::DegenerateMask)?;
    let a = sess.tape.value(coefficients);
    let m = members.len();
    let mut out = Tensor::zeros(&[inputs.rows, inputs.len()]);
    let slots = inputs.len();
    for r in 0..inputs.rows {
        for (col, (slot, _, _)) in members.iter().enumerate() {
            out.data_mut()[r * slots + slot] = a.data()[r * m + col];
        }
    }
    Ok(out)
}

/// Mixing weights for the candidate operations of a component.
#[derive(Debug, Clone, Copy)]
pub enum OpWeights {
    /// Probabilities computed on the tape (length-4 vector).
    Learned(Var),
    Fixed([f64; 4]),
}

/// Operation probabilities of one component: softmax of its logit column,
/// restricted to `ops`.
pub fn operation_probabilities(
    tape: &mut Tape,
    beta: Var,
    column: usize,
    ops: OpSet,
) -> Result<Var> {
    let col = tape.column(beta, column)?;
    let mut logits = tape.reshape(col, &[FusionOp::ALL.len()])?;
    if ops.len() < FusionOp::ALL.len() {
        logits = tape.mask_columns(logits, &ops.mask())?;
    }
    tape.softmax(logits)
}

/// `Σ_o p_o · fuse(o, inputs)` over the operations in `ops`.
pub fn mix_operations(
    sess: &mut Session<'_>,
    weights: OpWeights,
    ops: OpSet,
    params: Option<&FusionParams>,
    inputs: &FusionInputs,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for op in ops.iter() {
        let term = match weights {
            OpWeights::Fixed(p) => {
                let p = p[op.index()];
                if p == 0.0 {
                    continue;
                }
                let fused = fuse(sess, op, params, inputs)?;
                sess.tape.scale(fused, p)
            }
            OpWeights::Learned(probs) => {
                let fused = fuse(sess, op, params, inputs)?;
                let p = sess.tape.element(probs, op.index())?;
                sess.tape.scale_by(p, fused)?
            }
        };
        acc = Some(match acc {
            Some(a) => sess.tape.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Contract("no operation carries weight".into()))
}
