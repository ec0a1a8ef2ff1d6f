//! Central-difference checks for every differentiable operation. Each check
//! runs [`INSTANCES`] random instances and reports the worst relative error.

use ctrfuse_core::autodiff::Activation;
use ctrfuse_core::components::{
    cross_layer_forward, deep_layer_forward, embedding_forward, output_forward, CrossParams,
    DeepParams, EmbeddingParams, OutputParams,
};
use ctrfuse_core::data::Batch;
use ctrfuse_core::fusion::{
    fuse, mix_operations, operation_probabilities, FusionInputs, FusionParams, Gate, OpWeights,
};
use ctrfuse_core::params::Session;
use ctrfuse_core::search::loss_and_gradients;
use ctrfuse_core::{
    FieldSchema, FusionOp, Mode, OpSet, OperationParams, ParamGroup, ParamId, ParamStore, Result,
    Supernet, SupernetConfig, Tensor, Var,
};
use rand::Rng;

use super::{
    away_from_zero, gradient_error, project, random_rows, random_tensor, rng, store_of, FD_FLOOR,
    FD_STEP,
};

pub const INSTANCES: u64 = 20;
pub const TOLERANCE: f64 = 1e-4;

/// Worst error over all instances of one check.
fn worst(check: impl Fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(check).fold(0.0, f64::max)
}

/// Checks an operation whose inputs are all trainable leaves.
fn leaves(
    seed: u64,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Session<'_>, &[Var]) -> Result<Var>,
) -> f64 {
    let (store, ids) = store_of(inputs);
    gradient_error(&store, &ids, |sess| {
        let vars: Vec<Var> = ids.iter().map(|&id| sess.param(id)).collect();
        let out = f(sess, &vars)?;
        project(sess, out, seed)
    })
}

pub fn matmul() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let (m, k, n) = (
            r.random_range(1..5),
            r.random_range(1..5),
            r.random_range(1..5),
        );
        let inputs = vec![
            random_tensor(&mut r, &[m, k], 1.0),
            random_tensor(&mut r, &[k, n], 1.0),
        ];
        leaves(s, inputs, |sess, v| sess.tape.matmul(v[0], v[1]))
    })
}

pub fn add() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![
            random_tensor(&mut r, &[3, 4], 1.0),
            random_tensor(&mut r, &[3, 4], 1.0),
        ];
        leaves(s, inputs, |sess, v| sess.tape.add(v[0], v[1]))
    })
}

pub fn mul() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![
            random_tensor(&mut r, &[3, 4], 1.0),
            random_tensor(&mut r, &[3, 4], 1.0),
        ];
        leaves(s, inputs, |sess, v| sess.tape.mul(v[0], v[1]))
    })
}

pub fn add_bias() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![
            random_tensor(&mut r, &[3, 4], 1.0),
            random_tensor(&mut r, &[4], 1.0),
        ];
        leaves(s, inputs, |sess, v| sess.tape.add_bias(v[0], v[1]))
    })
}

pub fn scale_by() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![
            random_tensor(&mut r, &[1], 1.0),
            random_tensor(&mut r, &[3, 4], 1.0),
        ];
        leaves(s, inputs, |sess, v| sess.tape.scale_by(v[0], v[1]))
    })
}

pub fn scale() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let c = r.random::<f64>() * 4.0 - 2.0;
        let inputs = vec![random_tensor(&mut r, &[3, 4], 1.0)];
        leaves(s, inputs, |sess, v| Ok(sess.tape.scale(v[0], c)))
    })
}

pub fn row_scale() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![
            random_tensor(&mut r, &[3, 4], 1.0),
            random_tensor(&mut r, &[3, 1], 1.0),
        ];
        leaves(s, inputs, |sess, v| sess.tape.row_scale(v[0], v[1]))
    })
}

pub fn gate_blend() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![
            random_tensor(&mut r, &[1], 1.0),
            random_tensor(&mut r, &[3, 4], 2.0),
        ];
        leaves(s, inputs, |sess, v| sess.tape.gate_blend(v[0], v[1]))
    })
}

pub fn concat() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let axis = (s % 2) as usize;
        let shapes: [[usize; 2]; 3] = if axis == 0 {
            [[1, 3], [2, 3], [3, 3]]
        } else {
            [[2, 1], [2, 2], [2, 3]]
        };
        let inputs = shapes
            .iter()
            .map(|sh| random_tensor(&mut r, sh, 1.0))
            .collect();
        leaves(s, inputs, |sess, v| sess.tape.concat(v, axis))
    })
}

pub fn relu() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![away_from_zero(&mut r, &[3, 4], 1.0, 1e-3)];
        leaves(s, inputs, |sess, v| {
            Ok(sess.tape.activation(v[0], Activation::Relu))
        })
    })
}

pub fn sigmoid() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![random_tensor(&mut r, &[3, 4], 4.0)];
        leaves(s, inputs, |sess, v| Ok(sess.tape.sigmoid(v[0])))
    })
}

pub fn softmax() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let shape: &[usize] = if s % 2 == 0 { &[3, 4] } else { &[4] };
        let inputs = vec![random_tensor(&mut r, shape, 3.0)];
        leaves(s, inputs, |sess, v| sess.tape.softmax(v[0]))
    })
}

pub fn mask_columns() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let mut keep: Vec<bool> = (0..4).map(|_| r.random::<bool>()).collect();
        keep[r.random_range(0..4)] = true;
        let inputs = vec![random_tensor(&mut r, &[3, 4], 3.0)];
        leaves(s, inputs, move |sess, v| {
            let masked = sess.tape.mask_columns(v[0], &keep)?;
            sess.tape.softmax(masked)
        })
    })
}

pub fn gather_rows() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let indices: Vec<usize> = (0..6).map(|_| r.random_range(0..4)).collect();
        let inputs = vec![random_tensor(&mut r, &[4, 3], 1.0)];
        leaves(s, inputs, move |sess, v| {
            sess.tape.gather_rows(v[0], &indices)
        })
    })
}

pub fn reshape() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![random_tensor(&mut r, &[3, 4], 1.0)];
        leaves(s, inputs, |sess, v| sess.tape.reshape(v[0], &[2, 6]))
    })
}

pub fn element() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let k = r.random_range(0..12);
        let inputs = vec![random_tensor(&mut r, &[3, 4], 1.0)];
        leaves(s, inputs, move |sess, v| {
            let e = sess.tape.element(v[0], k)?;
            // Square so the gradient depends on the value.
            sess.tape.mul(e, e)
        })
    })
}

pub fn column() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let j = r.random_range(0..4);
        let inputs = vec![random_tensor(&mut r, &[3, 4], 1.0)];
        leaves(s, inputs, move |sess, v| {
            let c = sess.tape.column(v[0], j)?;
            sess.tape.mul(c, c)
        })
    })
}

pub fn sum() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let inputs = vec![random_tensor(&mut r, &[3, 4], 1.0)];
        leaves(s, inputs, |sess, v| {
            let sq = sess.tape.mul(v[0], v[0])?;
            Ok(sess.tape.sum(sq))
        })
    })
}

pub fn bce_mean() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let labels: Vec<f64> = (0..6).map(|_| f64::from(r.random::<bool>())).collect();
        let inputs = vec![random_tensor(&mut r, &[6, 1], 3.0)];
        leaves(s, inputs, move |sess, v| {
            let p = sess.tape.sigmoid(v[0]);
            sess.tape.bce_mean(p, &labels)
        })
    })
}

pub fn embedding() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let schema = FieldSchema::new(vec![4, 3, 5], 2).unwrap();
        let mut store = ParamStore::new();
        let params = EmbeddingParams::init(&mut store, &mut r, &schema, "E");
        let rows = 5;
        let indices = random_rows(schema.vocab_sizes(), rows, s);
        gradient_error(&store, &params.tables, |sess| {
            let out = embedding_forward(sess, &schema, &params, &indices, rows)?;
            project(sess, out, s)
        })
    })
}

pub fn cross_layer() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let d = 4;
        let mut store = ParamStore::new();
        let params = CrossParams::init(&mut store, &mut r, d, "S");
        store
            .value_mut(params.b)
            .data_mut()
            .copy_from_slice(random_tensor(&mut r, &[d], 1.0).data());
        let x0 = store.add("x0", ParamGroup::Model, random_tensor(&mut r, &[3, d], 1.0));
        let xl = store.add("xl", ParamGroup::Model, random_tensor(&mut r, &[3, d], 1.0));
        gradient_error(&store, &[params.w, params.b, x0, xl], |sess| {
            let (a, b) = (sess.param(x0), sess.param(xl));
            let out = cross_layer_forward(sess, &params, a, b)?;
            project(sess, out, s)
        })
    })
}

pub fn deep_layer() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let d = 4;
        let mut store = ParamStore::new();
        let params = DeepParams::init(&mut store, &mut r, d, "D");
        store
            .value_mut(params.b)
            .data_mut()
            .copy_from_slice(random_tensor(&mut r, &[d], 0.5).data());
        let x = store.add("x", ParamGroup::Model, random_tensor(&mut r, &[3, d], 1.0));
        gradient_error(&store, &[params.w, params.b, x], |sess| {
            let v = sess.param(x);
            let out = deep_layer_forward(sess, &params, v)?;
            project(sess, out, s)
        })
    })
}

pub fn output_head() -> f64 {
    worst(|s| {
        let mut r = rng(s);
        let d = 4;
        let mut store = ParamStore::new();
        let params = OutputParams::init(&mut store, &mut r, d, "H");
        let x = store.add("x", ParamGroup::Model, random_tensor(&mut r, &[3, d], 1.0));
        gradient_error(&store, &[params.w, params.b, x], |sess| {
            let v = sess.param(x);
            let out = output_forward(sess, &params, v)?;
            project(sess, out, s)
        })
    })
}

/// Random fusion problem: `slots` inputs of `rows × d`, a learned,
/// open or closed gate per slot and freshly drawn fusion weights.
struct FusionCase {
    store: ParamStore,
    inputs: Vec<ParamId>,
    /// Per slot: `None` for fixed gates, else the scalar gate pre-activation.
    alphas: Vec<Option<ParamId>>,
    fixed: Vec<Gate>,
    params: FusionParams,
    rows: usize,
    d: usize,
}

impl FusionCase {
    fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let (rows, d) = (2, 3);
        let slots = r.random_range(1..=4);
        let mut store = ParamStore::new();
        let inputs = (0..slots)
            .map(|i| {
                store.add(
                    format!("x{i}"),
                    ParamGroup::Model,
                    random_tensor(&mut r, &[rows, d], 1.5),
                )
            })
            .collect();
        let mut alphas = Vec::new();
        let mut fixed = Vec::new();
        for i in 0..slots {
            match r.random_range(0..4) {
                0 => {
                    alphas.push(None);
                    fixed.push(Gate::Closed);
                }
                1 => {
                    alphas.push(None);
                    fixed.push(Gate::Open);
                }
                _ => {
                    let a = if r.random::<bool>() { 0.5 } else { -0.5 };
                    alphas.push(Some(store.add(
                        format!("a{i}"),
                        ParamGroup::Connection,
                        Tensor::scalar(a),
                    )));
                    fixed.push(Gate::Open);
                }
            }
        }
        let params = FusionParams::init(&mut store, &mut r, slots, d, "F");
        store
            .value_mut(params.att_b1)
            .data_mut()
            .copy_from_slice(random_tensor(&mut r, &[d], 0.5).data());
        FusionCase {
            store,
            inputs,
            alphas,
            fixed,
            params,
            rows,
            d,
        }
    }

    /// Gate for every slot. `continuous` replaces each learned gate's STE
    /// by the raw leaf `g` so the gate value itself can be perturbed.
    fn build(
        &self,
        sess: &mut Session<'_>,
        continuous: Option<&[ParamId]>,
    ) -> Result<FusionInputs> {
        let mut slots = Vec::new();
        for (i, &x) in self.inputs.iter().enumerate() {
            let gate = match self.alphas[i] {
                None => self.fixed[i],
                Some(a) => {
                    let alpha = self.store.value(a).item();
                    let value = if alpha > 0.0 { 1.0 } else { 0.0 };
                    let var = match continuous {
                        Some(g) => sess.param(g[i]),
                        None => {
                            let v = sess.param(a);
                            sess.tape.ste(v)
                        }
                    };
                    Gate::Learned { var, value }
                }
            };
            let raw = match gate {
                Gate::Closed => None,
                _ => Some(sess.param(x)),
            };
            slots.push((gate, raw));
        }
        FusionInputs::new(&mut sess.tape, &slots, self.rows, self.d)
    }

    fn weights(&self) -> Vec<ParamId> {
        let p = &self.params;
        let mut w = self.inputs.clone();
        w.extend([p.concat_w, p.att_w1, p.att_b1, p.att_w2]);
        w
    }
}

pub fn fusion(op: FusionOp) -> f64 {
    worst(|s| {
        let case = FusionCase::new(s * 7 + op.index() as u64);
        gradient_error(&case.store, &case.weights(), |sess| {
            let inputs = case.build(sess, None)?;
            let out = fuse(sess, op, Some(&case.params), &inputs)?;
            project(sess, out, s)
        })
    })
}

/// Gradient reaching α through the STE equals the derivative of the loss
/// with respect to the gate value itself.
pub fn gate_path(op: FusionOp) -> f64 {
    worst(|s| {
        let case = FusionCase::new(1000 + s * 7 + op.index() as u64);
        let learned: Vec<usize> = (0..case.inputs.len())
            .filter(|&i| case.alphas[i].is_some())
            .collect();
        if learned.is_empty() {
            return 0.0;
        }
        let mut sess = Session::new(&case.store, &[ParamGroup::Connection]);
        let inputs = case.build(&mut sess, None).unwrap();
        let out = fuse(&mut sess, op, Some(&case.params), &inputs).unwrap();
        let loss = project(&mut sess, out, s).unwrap();
        let grads = sess.backward(loss).unwrap();

        let mut gated = case.store.clone();
        let gate_ids: Vec<ParamId> = (0..case.inputs.len())
            .map(|i| {
                let value = case.alphas[i].map_or(1.0, |a| {
                    if case.store.value(a).item() > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                });
                gated.add(format!("g{i}"), ParamGroup::Model, Tensor::scalar(value))
            })
            .collect();
        let value_at = |store: &ParamStore| {
            let mut sess = Session::inference(store);
            let inputs = case.build(&mut sess, Some(&gate_ids)).unwrap();
            let out = fuse(&mut sess, op, Some(&case.params), &inputs).unwrap();
            let loss = project(&mut sess, out, s).unwrap();
            sess.tape.value(loss).item()
        };
        let mut err: f64 = 0.0;
        for &i in &learned {
            let analytic = grads.get(case.alphas[i].unwrap()).map_or(0.0, |g| g[0]);
            let mut plus = gated.clone();
            plus.value_mut(gate_ids[i]).data_mut()[0] += FD_STEP;
            let mut minus = gated.clone();
            minus.value_mut(gate_ids[i]).data_mut()[0] -= FD_STEP;
            let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * FD_STEP);
            err = err
                .max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR));
        }
        err
    })
}

pub fn mixer() -> f64 {
    worst(|s| {
        let mut case = FusionCase::new(2000 + s);
        let mut r = rng(3000 + s);
        let ops = if s % 3 == 0 {
            OpSet::from_ops(&[FusionOp::Add, FusionOp::Att]).unwrap()
        } else {
            OpSet::all()
        };
        let beta = case.store.add(
            "beta",
            ParamGroup::Operation,
            random_tensor(&mut r, &[4, 3], 2.0),
        );
        let column = r.random_range(0..3);
        let mut wrt = case.weights();
        wrt.push(beta);
        gradient_error(&case.store, &wrt, |sess| {
            let inputs = case.build(sess, None)?;
            let b = sess.param(beta);
            let probs = operation_probabilities(&mut sess.tape, b, column, ops)?;
            let out = mix_operations(
                sess,
                OpWeights::Learned(probs),
                ops,
                Some(&case.params),
                &inputs,
            )?;
            project(sess, out, s)
        })
    })
}

/// Regularised training loss of a whole search-mode network with respect
/// to its model weights and operation logits.
pub fn training_loss() -> f64 {
    worst(|s| {
        let schema = FieldSchema::new(vec![4, 3], 2).unwrap();
        let config = SupernetConfig {
            n: 1,
            with_s0: s % 2 == 0,
            mode: Mode::Search,
            op_set: OpSet::all(),
        };
        let mut net = Supernet::new(config, schema.clone(), None, s).unwrap();
        let mut r = rng(4000 + s);
        let beta = net.beta();
        let cols = beta.columns();
        let dense = random_tensor(&mut r, &[4 * cols], 1.0).into_data();
        net.set_beta(&OperationParams::from_dense(net.graph(), &dense).unwrap())
            .unwrap();
        // Zero-initialised biases put ReLUs fed by all-zero rows exactly on
        // their kink.
        let biases: Vec<ParamId> = net
            .store()
            .ids()
            .filter(|&id| net.store().name(id).ends_with("b1"))
            .collect();
        for id in biases {
            let len = net.store().value(id).len();
            let noise = random_tensor(&mut r, &[len], 0.3);
            net.store_mut()
                .value_mut(id)
                .data_mut()
                .copy_from_slice(noise.data());
        }
        let rows = 6;
        let batch = Batch {
            rows: (0..rows).collect(),
            indices: random_rows(schema.vocab_sizes(), rows, s),
            labels: (0..rows).map(|_| f64::from(r.random::<bool>())).collect(),
        };
        let l2 = 0.01;
        let groups = [ParamGroup::Model, ParamGroup::Operation];
        let (_, grads) = loss_and_gradients(&net, &batch, l2, &groups).unwrap();
        let model: Vec<ParamId> = grads
            .entries
            .iter()
            .map(|(id, _)| *id)
            .filter(|&id| net.store().group(id) == ParamGroup::Model)
            .collect();
        let value = |net: &Supernet| {
            let probs = net.predict(&batch.indices, rows).unwrap();
            let penalty: f64 = model
                .iter()
                .map(|&id| net.store().value(id).sum_squares())
                .sum();
            cross_entropy(&batch.labels, &probs) + l2 * penalty
        };
        let mut err: f64 = 0.0;
        for (id, analytic) in &grads.entries {
            for k in 0..analytic.len() {
                let mut plus = net.clone();
                plus.store_mut().value_mut(*id).data_mut()[k] += FD_STEP;
                let mut minus = net.clone();
                minus.store_mut().value_mut(*id).data_mut()[k] -= FD_STEP;
                let numeric = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
                err = err.max(
                    (analytic[k] - numeric).abs()
                        / analytic[k].abs().max(numeric.abs()).max(FD_FLOOR),
                );
            }
        }
        err
    })
}

fn cross_entropy(labels: &[f64], probs: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(y, p)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum();
    total / labels.len() as f64
}

/// Every check by name.
pub fn all() -> Vec<(&'static str, fn() -> f64)> {
    vec![
        ("matmul", matmul),
        ("add", add),
        ("mul", mul),
        ("add_bias", add_bias),
        ("scale_by", scale_by),
        ("scale", scale),
        ("row_scale", row_scale),
        ("gate_blend", gate_blend),
        ("concat", concat),
        ("relu", relu),
        ("sigmoid", sigmoid),
        ("softmax", softmax),
        ("mask_columns", mask_columns),
        ("gather_rows", gather_rows),
        ("reshape", reshape),
        ("element", element),
        ("column", column),
        ("sum", sum),
        ("bce_mean", bce_mean),
        ("embedding", embedding),
        ("cross_layer", cross_layer),
        ("deep_layer", deep_layer),
        ("output_head", output_head),
        ("fuse_add", || fusion(FusionOp::Add)),
        ("fuse_prod", || fusion(FusionOp::Prod)),
        ("fuse_concat", || fusion(FusionOp::Concat)),
        ("fuse_att", || fusion(FusionOp::Att)),
        ("gate_add", || gate_path(FusionOp::Add)),
        ("gate_prod", || gate_path(FusionOp::Prod)),
        ("gate_concat", || gate_path(FusionOp::Concat)),
        ("gate_att", || gate_path(FusionOp::Att)),
        ("mixer", mixer),
        ("training_loss", training_loss),
    ]
}
