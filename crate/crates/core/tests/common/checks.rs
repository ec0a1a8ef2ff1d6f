//! Measurements shared by the oracle tests and the acceptance suite. Each
//! returns a number to compare against a tolerance instead of asserting.

use ctrfuse_core::architecture::discretize;
use ctrfuse_core::{
    auc, preset, ArchitectureDescriptor, ComponentGraph, ConnectionParams, FieldSchema, Metadata,
    Mode, OpSet, OperationParams, PresetKind, Supernet, SupernetConfig, Tape, Tensor, Variant,
};
use rand::Rng;

use super::{all_pairs_auc, parallel_baseline, random_rows, rng, stacked_baseline};

pub fn config(desc: &ArchitectureDescriptor, mode: Mode) -> SupernetConfig {
    SupernetConfig {
        n: desc.n(),
        with_s0: desc.with_s0(),
        mode,
        op_set: OpSet::all(),
    }
}

pub fn random_alpha(graph: &ComponentGraph, r: &mut impl Rng) -> ConnectionParams {
    let mut alpha = ConnectionParams::init(graph);
    for (from, to) in graph.valid_edges() {
        alpha.set(from, to, r.random::<f64>() * 2.0 - 1.0).unwrap();
    }
    alpha
}

pub fn random_beta(graph: &ComponentGraph, r: &mut impl Rng, spread: f64) -> OperationParams {
    let mut beta = OperationParams::init(graph);
    for c in 0..beta.columns() {
        beta.set_column(
            c,
            core::array::from_fn(|_| (r.random::<f64>() - 0.5) * spread),
        );
    }
    beta
}

/// Largest absolute gap between a fixed-mode preset network and the
/// hand-built baseline over `rows` random rows.
pub fn preset_gap(kind: PresetKind, n: usize, seed: u64, rows: usize) -> f64 {
    let schema = FieldSchema::new(vec![7, 11, 5, 9], 3).unwrap();
    let desc = preset(kind, n).unwrap();
    let net = Supernet::new(config(&desc, Mode::Fixed), schema.clone(), Some(desc), seed).unwrap();
    let indices = random_rows(schema.vocab_sizes(), rows, seed + 100);
    let probs = net.predict(&indices, 32).unwrap();
    let f = schema.num_fields();
    (0..rows)
        .map(|r| {
            let row = &indices[r * f..(r + 1) * f];
            let want = match kind {
                PresetKind::Parallel => parallel_baseline(&net, n, row),
                PresetKind::Stacked => stacked_baseline(&net, n, row),
            };
            (probs[r] - want).abs()
        })
        .fold(0.0, f64::max)
}

/// Cycles plus level-order violations over `draws` random α draws, each
/// discretized both ways.
pub fn dag_violations(draws: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut violations = 0;
    for draw in 0..draws {
        let n = 1 + draw % 4;
        let graph = ComponentGraph::new(n, draw % 2 == 0).unwrap();
        let alpha = random_alpha(&graph, &mut r);
        let beta = random_beta(&graph, &mut r, 4.0);
        for variant in [Variant::Soft, Variant::Hard] {
            let desc = discretize(
                &graph,
                &alpha,
                &beta,
                variant,
                OpSet::all(),
                Metadata::default(),
            )
            .unwrap();
            if desc.topological_order().is_err() {
                violations += 1;
            }
            violations += desc
                .edges()
                .iter()
                .filter(|&&(a, b)| graph.level(a) >= graph.level(b))
                .count();
        }
    }
    violations
}

/// Gap between soft and hard retrain networks on 100 rows when every β
/// column's top logit leads the rest by at least 20.
pub fn saturated_soft_hard_gap(seed: u64) -> f64 {
    let schema = FieldSchema::new(vec![6, 6, 6], 2).unwrap();
    let mut r = rng(seed);
    let graph = ComponentGraph::new(2, true).unwrap();
    let alpha = random_alpha(&graph, &mut r);
    let mut beta = OperationParams::init(&graph);
    for c in 0..beta.columns() {
        let top = r.random_range(0..4);
        let mut col: [f64; 4] = core::array::from_fn(|_| r.random::<f64>() * 5.0);
        col[top] = col.iter().cloned().fold(f64::MIN, f64::max) + 20.0;
        beta.set_column(c, col);
    }
    let soft = discretize(
        &graph,
        &alpha,
        &beta,
        Variant::Soft,
        OpSet::all(),
        Metadata::default(),
    )
    .unwrap();
    let soft_net = Supernet::new(
        config(&soft, Mode::RetrainSoft),
        schema.clone(),
        Some(soft.clone()),
        seed,
    )
    .unwrap();
    let hard_net = Supernet::new(
        config(&soft, Mode::RetrainHard),
        schema.clone(),
        Some(soft),
        seed,
    )
    .unwrap();
    let rows = random_rows(schema.vocab_sizes(), 100, seed + 1);
    let a = soft_net.predict(&rows, 64).unwrap();
    let b = hard_net.predict(&rows, 64).unwrap();
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Whether the step forward matches `x > 0` at the given points, and how
/// many of 1000 random upstream gradients come back altered.
pub fn ste_contract(seed: u64) -> (bool, usize) {
    let points = [0.0, 0.5, -0.1, -0.0, 1e-300];
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(points.to_vec()).unwrap(), true);
    let y = tape.ste(x);
    let forward = tape
        .value(y)
        .data()
        .iter()
        .zip(points)
        .all(|(&s, p)| s == f64::from(u8::from(p > 0.0)));

    let mut r = rng(seed);
    let mut altered = 0;
    for _ in 0..1000 {
        let v = (r.random::<f64>() - 0.5) * 10.0;
        let upstream = (r.random::<f64>() - 0.5) * 10.0;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(v), true);
        let s = tape.ste(x);
        let c = tape.constant(Tensor::scalar(upstream));
        let loss = tape.mul(s, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        altered += usize::from(grads.get(x).unwrap()[0].to_bits() != upstream.to_bits());
    }
    (forward, altered)
}

/// Random label/score sets where rank AUC and all-pairs AUC differ. Odd
/// sets draw scores from a coarse grid so ties are common.
pub fn auc_mismatches(sets: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut mismatches = 0;
    for set in 0..sets {
        let len = r.random_range(2..300);
        let mut labels: Vec<f64> = (0..len).map(|_| f64::from(r.random_bool(0.3))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let scores: Vec<f64> = if set % 2 == 0 {
            (0..len).map(|_| r.random::<f64>()).collect()
        } else {
            (0..len)
                .map(|_| f64::from(r.random_range(0..8)) / 8.0)
                .collect()
        };
        mismatches +=
            usize::from(auc(&labels, &scores).unwrap() != all_pairs_auc(&labels, &scores));
    }
    mismatches
}
