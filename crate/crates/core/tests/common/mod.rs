//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls into the code under test for the quantity it
//! checks: gradients come from central differences, baselines are plain
//! loops over the stored weights, counts come from enumeration.

#![allow(dead_code)]

pub mod checks;
pub mod gradient_suite;

use ctrfuse_core::params::Session;
use ctrfuse_core::{ParamGroup, ParamId, ParamStore, Result, Supernet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Below this magnitude gradients are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = (rng.random::<f64>() * 2.0 - 1.0) * scale;
    }
    t
}

/// Like [`random_tensor`], but every entry keeps at least `gap` away from
/// zero so finite differences never straddle a ReLU or STE kink.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], scale: f64, gap: f64) -> Tensor {
    let mut t = random_tensor(rng, shape, scale);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap } - *v;
        }
    }
    t
}

/// `Σ out ⊙ R` for a fixed random `R`, turning any output into a scalar
/// whose gradient exercises every output entry.
pub fn project(sess: &mut Session<'_>, out: Var, seed: u64) -> Result<Var> {
    let shape = sess.tape.shape(out).to_vec();
    let r = random_tensor(&mut rng(seed ^ 0x9e37_79b9), &shape, 1.0);
    let r = sess.tape.constant(r);
    let weighted = sess.tape.mul(out, r)?;
    Ok(sess.tape.sum(weighted))
}

fn loss_value(store: &ParamStore, f: &dyn Fn(&mut Session<'_>) -> Result<Var>) -> f64 {
    let mut sess = Session::inference(store);
    let loss = f(&mut sess).expect("loss builds");
    sess.tape.value(loss).item()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every entry of the parameters in `wrt`.
pub fn gradient_error(
    store: &ParamStore,
    wrt: &[ParamId],
    f: impl Fn(&mut Session<'_>) -> Result<Var>,
) -> f64 {
    let groups = [
        ParamGroup::Model,
        ParamGroup::Connection,
        ParamGroup::Operation,
    ];
    let mut sess = Session::new(store, &groups);
    let loss = f(&mut sess).expect("loss builds");
    let grads = sess.backward(loss).expect("backward runs");
    let mut worst: f64 = 0.0;
    for &id in wrt {
        let len = store.value(id).len();
        let analytic: Vec<f64> = grads
            .get(id)
            .map_or_else(|| vec![0.0; len], <[f64]>::to_vec);
        for k in 0..len {
            let mut plus = store.clone();
            plus.value_mut(id).data_mut()[k] += FD_STEP;
            let mut minus = store.clone();
            minus.value_mut(id).data_mut()[k] -= FD_STEP;
            let numeric = (loss_value(&plus, &f) - loss_value(&minus, &f)) / (2.0 * FD_STEP);
            let err =
                (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Store holding `tensors` as trainable model parameters named `p0`, `p1`, ….
pub fn store_of(tensors: Vec<Tensor>) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = tensors
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("p{i}"), ParamGroup::Model, t))
        .collect();
    (store, ids)
}

/// Row-major dense matrix used by the hand-built baselines.
#[derive(Debug, Clone)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn from_tensor(t: &Tensor) -> Mat {
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => panic!("expected a matrix or vector"),
        };
        Mat {
            rows,
            cols,
            data: t.data().to_vec(),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

fn named(net: &Supernet, name: &str) -> Mat {
    let id = net
        .store()
        .find(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    Mat::from_tensor(net.store().value(id))
}

fn vec_mat(x: &[f64], m: &Mat) -> Vec<f64> {
    assert_eq!(x.len(), m.rows);
    (0..m.cols)
        .map(|c| (0..m.rows).map(|r| x[r] * m.at(r, c)).sum())
        .collect()
}

/// Embedding lookups of one row laid side by side, read straight from the
/// stored tables.
pub fn embed_row(net: &Supernet, fields: &[u32]) -> Vec<f64> {
    let mut out = Vec::new();
    for (f, &idx) in fields.iter().enumerate() {
        let t = named(net, &format!("E.table{f}"));
        out.extend((0..t.cols).map(|c| t.at(idx as usize, c)));
    }
    out
}

/// One cross layer: `x0 · (xl · w) + b + xl`.
pub fn cross(net: &Supernet, name: &str, x0: &[f64], xl: &[f64]) -> Vec<f64> {
    let w = named(net, &format!("{name}.w"));
    let b = named(net, &format!("{name}.b"));
    let s: f64 = xl.iter().zip(&w.data).map(|(a, b)| a * b).sum();
    x0.iter()
        .zip(&b.data)
        .zip(xl)
        .map(|((x, b), l)| x * s + b + l)
        .collect()
}

/// One deep layer: `relu(x · W + b)`.
pub fn deep(net: &Supernet, name: &str, x: &[f64]) -> Vec<f64> {
    let w = named(net, &format!("{name}.w"));
    let b = named(net, &format!("{name}.b"));
    vec_mat(x, &w)
        .iter()
        .zip(&b.data)
        .map(|(h, b)| (h + b).max(0.0))
        .collect()
}

/// Output head: `sigmoid(x · w + b)`.
pub fn head(net: &Supernet, x: &[f64]) -> f64 {
    let w = named(net, "H.w");
    let b = named(net, "H.b");
    let z: f64 = x.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>() + b.data[0];
    1.0 / (1.0 + (-z).exp())
}

/// `[x_1 ‖ … ‖ x_k] · W_sub`, where `W_sub` stacks the row blocks of the
/// component's concat weight belonging to `slots`.
pub fn concat_fuse(net: &Supernet, name: &str, inputs: &[(&[f64], usize)]) -> Vec<f64> {
    let w = named(net, &format!("{name}.concat.w"));
    let d = w.cols;
    let mut out = vec![0.0; d];
    for (x, slot) in inputs {
        for (i, xi) in x.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += xi * w.at(slot * d + i, c);
            }
        }
    }
    out
}

/// Parallel towers: a cross chain and a deep chain side by side on the
/// embedding, concatenated at the head. Slots are the positions of the
/// last shallow and last deep component among the head's predecessors.
pub fn parallel_baseline(net: &Supernet, n: usize, fields: &[u32]) -> f64 {
    let graph = net.graph();
    let x0 = embed_row(net, fields);
    let mut s = x0.clone();
    let mut h = x0.clone();
    for i in 1..=n {
        s = cross(net, &format!("S{i}"), &x0, &s);
        h = deep(net, &format!("D{i}"), &h);
    }
    let out = graph.output();
    let s_slot = graph.slot_of(graph.shallow(n), out).expect("slot");
    let d_slot = graph.slot_of(graph.deep(n), out).expect("slot");
    let fused = concat_fuse(net, "H", &[(&s, s_slot), (&h, d_slot)]);
    head(net, &fused)
}

/// Stacked: one cross layer on the embedding, concatenated with the
/// embedding and fed through the deep chain.
pub fn stacked_baseline(net: &Supernet, n: usize, fields: &[u32]) -> f64 {
    let x0 = embed_row(net, fields);
    let s0 = cross(net, "S0", &x0, &x0);
    let graph = net.graph();
    let d1 = graph.deep(1);
    let e_slot = graph.slot_of(graph.embedding(), d1).expect("slot");
    let s0_slot = graph
        .slot_of(graph.s0().expect("stacked has S0"), d1)
        .expect("slot");
    let mut h = deep(
        net,
        "D1",
        &concat_fuse(net, "D1", &[(&x0, e_slot), (&s0, s0_slot)]),
    );
    for i in 2..=n {
        h = deep(net, &format!("D{i}"), &h);
    }
    head(net, &h)
}

pub fn random_rows(vocab_sizes: &[usize], rows: usize, seed: u64) -> Vec<u32> {
    let mut r = rng(seed);
    (0..rows * vocab_sizes.len())
        .map(|k| r.random_range(0..vocab_sizes[k % vocab_sizes.len()] as u32))
        .collect()
}

/// AUC by comparing every positive with every negative; ties count half.
pub fn all_pairs_auc(labels: &[f64], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1.0 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0.0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Components in level order for `n` blocks: E, optional S0, (S_i, D_i)…, H.
pub fn levels(n: usize, with_s0: bool) -> Vec<usize> {
    let shift = usize::from(with_s0);
    let mut out = vec![0];
    if with_s0 {
        out.push(1);
    }
    for i in 1..=n {
        out.push(i + shift);
        out.push(i + shift);
    }
    out.push(n + shift + 1);
    out
}

/// Number of ordered component pairs with strictly increasing level.
pub fn enumerate_connections(n: usize, with_s0: bool) -> u64 {
    let lv = levels(n, with_s0);
    let mut count = 0;
    for a in &lv {
        for b in &lv {
            if a < b {
                count += 1;
            }
        }
    }
    count
}
