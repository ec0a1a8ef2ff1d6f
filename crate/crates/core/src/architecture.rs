//! Discrete architectures: which connections exist and which fusion
//! operation each component uses.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};
use crate::fusion::{ComponentGraph, ConnectionParams, FusionOp, OpSet, OperationParams};

/// Tolerance on the sum of a soft operation distribution.
pub const SOFT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpChoice {
    Hard(FusionOp),
    /// Probabilities in [`FusionOp::ALL`] order.
    Soft([f64; 4]),
}

impl OpChoice {
    /// The chosen operation, or the most probable one (ties to the lowest
    /// index).
    pub fn dominant(&self) -> FusionOp {
        match *self {
            OpChoice::Hard(op) => op,
            OpChoice::Soft(p) => FusionOp::ALL[argmax_lowest(&p)],
        }
    }

    pub fn probabilities(&self) -> [f64; 4] {
        match *self {
            OpChoice::Hard(op) => core::array::from_fn(|o| if o == op.index() { 1.0 } else { 0.0 }),
            OpChoice::Soft(p) => p,
        }
    }
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Soft,
    Hard,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Soft => "soft",
            Variant::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metadata {
    pub seed: u64,
    pub dataset: String,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureDescriptor {
    graph: ComponentGraph,
    /// Dense `C × C`; only level-respecting entries may be set.
    connections: Vec<bool>,
    /// One per fusion-capable component, indexed by fusion column.
    operations: Vec<OpChoice>,
    pub metadata: Metadata,
}

impl ArchitectureDescriptor {
    /// Builds and validates a descriptor from an edge list.
    pub fn new(
        n: usize,
        with_s0: bool,
        edges: &[(usize, usize)],
        operations: Vec<OpChoice>,
        metadata: Metadata,
    ) -> Result<Self> {
        let graph = ComponentGraph::new(n, with_s0)?;
        let size = graph.len();
        let mut connections = vec![false; size * size];
        for &(from, to) in edges {
            if from >= size || to >= size {
                return Err(Error::Index {
                    index: from.max(to),
                    size,
                });
            }
            if !graph.allows(from, to) {
                return Err(Error::LevelConstraint { from, to });
            }
            connections[from * size + to] = true;
        }
        let desc = ArchitectureDescriptor {
            graph,
            connections,
            operations,
            metadata,
        };
        desc.validate(OpSet::all())?;
        Ok(desc)
    }

    /// Checks the level mask, the operation count, operation membership in
    /// `ops` and soft-distribution normalisation.
    pub fn validate(&self, ops: OpSet) -> Result<()> {
        let size = self.graph.len();
        for from in 0..size {
            for to in 0..size {
                if self.connections[from * size + to] && !self.graph.allows(from, to) {
                    return Err(Error::LevelConstraint { from, to });
                }
            }
        }
        if self.operations.len() != self.graph.num_fusion_capable() {
            return Err(Error::Architecture(format!(
                "expected {} operation entries, found {}",
                self.graph.num_fusion_capable(),
                self.operations.len()
            )));
        }
        for (col, choice) in self.operations.iter().enumerate() {
            let name = &self.graph.component(col + 1).name;
            match *choice {
                OpChoice::Hard(op) if !ops.contains(op) => {
                    return Err(Error::Architecture(format!(
                        "{name} uses {op}, which is outside the operation set"
                    )));
                }
                OpChoice::Hard(_) => {}
                OpChoice::Soft(p) => {
                    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        return Err(Error::Architecture(format!(
                            "{name} has an invalid probability vector {p:?}"
                        )));
                    }
                    let sum: f64 = p.iter().sum();
                    if (sum - 1.0).abs() > SOFT_SUM_TOLERANCE {
                        return Err(Error::Architecture(format!(
                            "{name} probabilities sum to {sum}"
                        )));
                    }
                    if let Some(op) = FusionOp::ALL
                        .into_iter()
                        .find(|op| p[op.index()] > 0.0 && !ops.contains(*op))
                    {
                        return Err(Error::Architecture(format!(
                            "{name} puts weight on {op}, which is outside the operation set"
                        )));
                    }
                }
            }
        }
        self.topological_order()?;
        Ok(())
    }

    pub fn graph(&self) -> &ComponentGraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn with_s0(&self) -> bool {
        self.graph.with_s0()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        let size = self.graph.len();
        from < size && to < size && self.connections[from * size + to]
    }

    /// Edges sorted by `(from, to)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let size = self.graph.len();
        let mut out = Vec::new();
        for from in 0..size {
            for to in 0..size {
                if self.connections[from * size + to] {
                    out.push((from, to));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.connections.iter().filter(|&&c| c).count()
    }

    pub fn in_degree(&self, id: usize) -> usize {
        (0..self.graph.len())
            .filter(|&i| self.has_edge(i, id))
            .count()
    }

    pub fn out_degree(&self, id: usize) -> usize {
        (0..self.graph.len())
            .filter(|&j| self.has_edge(id, j))
            .count()
    }

    pub fn operations(&self) -> &[OpChoice] {
        &self.operations
    }

    /// Operation of a fusion-capable component.
    pub fn operation(&self, id: usize) -> Option<&OpChoice> {
        self.graph.fusion_column(id).map(|c| &self.operations[c])
    }

    pub fn is_hard(&self) -> bool {
        self.operations
            .iter()
            .all(|o| matches!(o, OpChoice::Hard(_)))
    }

    /// Non-embedding components without incoming edges. They still run on
    /// the identity input of their operation.
    pub fn dead_components(&self) -> Vec<usize> {
        (1..self.graph.len())
            .filter(|&id| self.in_degree(id) == 0)
            .collect()
    }

    /// Components with a directed path to the output (the output included).
    pub fn reaches_output(&self) -> Vec<bool> {
        let size = self.graph.len();
        let mut reach = vec![false; size];
        reach[self.graph.output()] = true;
        for from in (0..size).rev() {
            if (0..size).any(|to| reach[to] && self.has_edge(from, to)) {
                reach[from] = true;
            }
        }
        reach
    }

    /// Kahn's algorithm over the edge list alone, popping the lowest ready
    /// id first. Fails if the edges contain a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let size = self.graph.len();
        let mut indegree: Vec<usize> = (0..size).map(|id| self.in_degree(id)).collect();
        let mut ready: BinaryHeap<Reverse<usize>> = (0..size)
            .filter(|&i| indegree[i] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(size);
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for to in 0..size {
                if self.has_edge(id, to) {
                    indegree[to] -= 1;
                    if indegree[to] == 0 {
                        ready.push(Reverse(to));
                    }
                }
            }
        }
        if order.len() != size {
            return Err(Error::Architecture("connections contain a cycle".into()));
        }
        Ok(order)
    }

    /// Replaces every soft choice by its dominant operation.
    pub fn to_hard(&self) -> Self {
        let mut out = self.clone();
        for choice in &mut out.operations {
            *choice = OpChoice::Hard(choice.dominant());
        }
        out
    }

    /// Architecture parameters that discretize back to this descriptor:
    /// `±1` connection logits and log-probability operation logits.
    pub fn to_params(&self) -> (ConnectionParams, OperationParams) {
        let mut alpha = ConnectionParams::init(&self.graph);
        for (from, to, _) in alpha.entries() {
            let v = if self.has_edge(from, to) { 1.0 } else { -1.0 };
            alpha.set(from, to, v).expect("entry comes from the mask");
        }
        let mut beta = OperationParams::init(&self.graph);
        for (col, choice) in self.operations.iter().enumerate() {
            let p = choice.probabilities();
            beta.set_column(
                col,
                p.map(|v| if v > 0.0 { libm::log(v) } else { LOG_ZERO }),
            );
        }
        (alpha, beta)
    }
}

/// Stand-in for `ln 0` in operation logits; `exp` of it underflows to 0.
const LOG_ZERO: f64 = -1e4;

/// Turns learned architecture parameters into a descriptor: a connection
/// exists iff its logit is positive; operations are the arg-max of each
/// column (hard) or its softmax (soft), both restricted to `ops`.
pub fn discretize(
    graph: &ComponentGraph,
    alpha: &ConnectionParams,
    beta: &OperationParams,
    variant: Variant,
    ops: OpSet,
    metadata: Metadata,
) -> Result<ArchitectureDescriptor> {
    if alpha.size() != graph.len() || beta.columns() != graph.num_fusion_capable() {
        return Err(Error::dim(
            "discretize",
            &[graph.len(), graph.num_fusion_capable()],
            &[alpha.size(), beta.columns()],
        ));
    }
    let edges: Vec<(usize, usize)> = alpha
        .entries()
        .into_iter()
        .filter(|&(_, _, a)| a > 0.0)
        .map(|(i, j, _)| (i, j))
        .collect();
    let operations = (0..beta.columns())
        .map(|col| {
            let p = beta.probabilities(col, ops);
            match variant {
                Variant::Soft => OpChoice::Soft(p),
                Variant::Hard => {
                    let logits = beta.column(col);
                    let masked: Vec<f64> = FusionOp::ALL
                        .iter()
                        .map(|op| {
                            if ops.contains(*op) {
                                logits[op.index()]
                            } else {
                                f64::NEG_INFINITY
                            }
                        })
                        .collect();
                    OpChoice::Hard(FusionOp::ALL[argmax_lowest(&masked)])
                }
            }
        })
        .collect();
    let desc =
        ArchitectureDescriptor::new(graph.n(), graph.with_s0(), &edges, operations, metadata)?;
    desc.validate(ops)?;
    Ok(desc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetKind {
    /// Shallow and deep towers side by side, merged at the output.
    Parallel,
    /// Shallow block first, its output concatenated with the embedding and
    /// fed to the deep tower.
    Stacked,
}

impl PresetKind {
    pub fn name(self) -> &'static str {
        match self {
            PresetKind::Parallel => "parallel",
            PresetKind::Stacked => "stacked",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "parallel" => Some(PresetKind::Parallel),
            "stacked" => Some(PresetKind::Stacked),
            _ => None,
        }
    }
}

/// Hand-designed fusion architectures.
///
/// * parallel (`with_s0 = false`): `E → S1 → … → Sn`, `E → D1 → … → Dn`,
///   and the output concatenates `Sn` and `Dn`.
/// * stacked (`with_s0 = true`): `E → S0`, then `D1` concatenates `E` and
///   `S0`, followed by `D1 → … → Dn → H`. Components on the same level
///   cannot be chained, so the shallow block is `S0` and `S1 … Sn` stay
///   unconnected.
pub fn preset(kind: PresetKind, n: usize) -> Result<ArchitectureDescriptor> {
    let with_s0 = kind == PresetKind::Stacked;
    let graph = ComponentGraph::new(n, with_s0)?;
    let mut edges = Vec::new();
    let mut ops = vec![OpChoice::Hard(FusionOp::Add); graph.num_fusion_capable()];
    let mut set_op =
        |id: usize, op| ops[graph.fusion_column(id).expect("fusion-capable")] = OpChoice::Hard(op);
    match kind {
        PresetKind::Parallel => {
            edges.push((graph.embedding(), graph.shallow(1)));
            edges.push((graph.embedding(), graph.deep(1)));
            for i in 1..n {
                edges.push((graph.shallow(i), graph.shallow(i + 1)));
                edges.push((graph.deep(i), graph.deep(i + 1)));
            }
            edges.push((graph.shallow(n), graph.output()));
            edges.push((graph.deep(n), graph.output()));
            set_op(graph.output(), FusionOp::Concat);
        }
        PresetKind::Stacked => {
            let s0 = graph.s0().expect("stacked preset has S0");
            edges.push((graph.embedding(), s0));
            edges.push((graph.embedding(), graph.deep(1)));
            edges.push((s0, graph.deep(1)));
            for i in 1..n {
                edges.push((graph.deep(i), graph.deep(i + 1)));
            }
            edges.push((graph.deep(n), graph.output()));
            set_op(graph.deep(1), FusionOp::Concat);
        }
    }
    let metadata = Metadata {
        seed: 0,
        dataset: String::new(),
        stage: format!("preset:{}", kind.name()),
    };
    ArchitectureDescriptor::new(n, with_s0, &edges, ops, metadata)
}
