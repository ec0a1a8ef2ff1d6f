//! Embedding, cross (shallow), MLP (deep) and output components.
//!
//! Every component maps `rows × d` activations to `rows × d`, where
//! `d = num_fields · emb_dim`; the output head maps to `rows × 1`
//! probabilities. Weight matrices are stored input-major (`d_in × d_out`) so
//! a batch is multiplied as `x · W`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSchema {
    vocab_sizes: Vec<usize>,
    emb_dim: usize,
}

impl FieldSchema {
    pub fn new(vocab_sizes: Vec<usize>, emb_dim: usize) -> Result<Self> {
        if vocab_sizes.is_empty() {
            return Err(Error::Argument("schema needs at least one field".into()));
        }
        if let Some((field, size)) = vocab_sizes.iter().enumerate().find(|(_, &v)| v < 2) {
            return Err(Error::Argument(format!(
                "field {field} has vocabulary size {size}; at least 2 (a value plus OOV) is required"
            )));
        }
        if emb_dim == 0 {
            return Err(Error::Argument(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(FieldSchema {
            vocab_sizes,
            emb_dim,
        })
    }

    pub fn uniform(num_fields: usize, vocab_size: usize, emb_dim: usize) -> Result<Self> {
        Self::new(alloc::vec![vocab_size; num_fields], emb_dim)
    }

    pub fn num_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    /// Common width `d` of every component.
    pub fn hidden_dim(&self) -> usize {
        self.num_fields() * self.emb_dim
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingParams {
    pub tables: Vec<ParamId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossParams {
    /// `d × 1`
    pub w: ParamId,
    /// `d`
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeepParams {
    /// `d × d`
    pub w: ParamId,
    /// `d`
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputParams {
    /// `d × 1`
    pub w: ParamId,
    /// `1`
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComponentParams {
    Embedding(EmbeddingParams),
    Cross(CrossParams),
    Deep(DeepParams),
    Output(OutputParams),
}

pub(crate) fn uniform_tensor<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = (rng.random::<f64>() * 2.0 - 1.0) * bound;
    }
    t
}

/// Glorot-uniform initialisation for a `fan_in × fan_out` matrix.
pub(crate) fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    uniform_tensor(rng, &[fan_in, fan_out], bound)
}

pub(crate) const EMBEDDING_INIT_BOUND: f64 = 0.05;

impl EmbeddingParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        schema: &FieldSchema,
        prefix: &str,
    ) -> Self {
        let tables = schema
            .vocab_sizes()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let t = uniform_tensor(rng, &[v, schema.emb_dim()], EMBEDDING_INIT_BOUND);
                store.add(format!("{prefix}.table{i}"), ParamGroup::Model, t)
            })
            .collect();
        EmbeddingParams { tables }
    }
}

impl CrossParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, d: usize, prefix: &str) -> Self {
        let w = store.add(format!("{prefix}.w"), ParamGroup::Model, glorot(rng, d, 1));
        let b = store.add(
            format!("{prefix}.b"),
            ParamGroup::Model,
            Tensor::zeros(&[d]),
        );
        CrossParams { w, b }
    }
}

impl DeepParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, d: usize, prefix: &str) -> Self {
        let w = store.add(format!("{prefix}.w"), ParamGroup::Model, glorot(rng, d, d));
        let b = store.add(
            format!("{prefix}.b"),
            ParamGroup::Model,
            Tensor::zeros(&[d]),
        );
        DeepParams { w, b }
    }
}

impl OutputParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, d: usize, prefix: &str) -> Self {
        let w = store.add(format!("{prefix}.w"), ParamGroup::Model, glorot(rng, d, 1));
        let b = store.add(
            format!("{prefix}.b"),
            ParamGroup::Model,
            Tensor::zeros(&[1]),
        );
        OutputParams { w, b }
    }
}

/// Looks up every field of every row and lays the embeddings side by side:
/// row `r` of the result is `[emb_0(x_r0) ‖ … ‖ emb_{f-1}(x_r,f-1)]`.
///
/// `indices` holds `rows × num_fields` entries, row-major.
pub fn embedding_forward(
    sess: &mut Session<'_>,
    schema: &FieldSchema,
    params: &EmbeddingParams,
    indices: &[u32],
    rows: usize,
) -> Result<Var> {
    let f = schema.num_fields();
    if indices.len() != rows * f || rows == 0 {
        return Err(Error::dim("embedding", &[rows, f], &[indices.len()]));
    }
    let mut per_field = Vec::with_capacity(f);
    for (field, &table_id) in params.tables.iter().enumerate() {
        let vocab = schema.vocab_sizes()[field];
        let column: Vec<usize> = indices
            .iter()
            .skip(field)
            .step_by(f)
            .map(|&i| i as usize)
            .collect();
        if let Some(&bad) = column.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index {
                index: bad,
                size: vocab,
            });
        }
        let table = sess.param(table_id);
        per_field.push(sess.tape.gather_rows(table, &column)?);
    }
    sess.tape.concat(&per_field, 1)
}

/// `x_{l+1} = x0 · (x_l · w) + b + x_l`, row by row.
pub fn cross_layer_forward(
    sess: &mut Session<'_>,
    params: &CrossParams,
    x0: Var,
    xl: Var,
) -> Result<Var> {
    if sess.tape.shape(x0) != sess.tape.shape(xl) {
        return Err(Error::dim(
            "cross_layer",
            sess.tape.shape(x0),
            sess.tape.shape(xl),
        ));
    }
    let w = sess.param(params.w);
    let b = sess.param(params.b);
    let s = sess.tape.matmul(xl, w)?;
    let scaled = sess.tape.row_scale(x0, s)?;
    let biased = sess.tape.add_bias(scaled, b)?;
    sess.tape.add(biased, xl)
}

/// `relu(x · W + b)`.
pub fn deep_layer_forward(sess: &mut Session<'_>, params: &DeepParams, x: Var) -> Result<Var> {
    let w = sess.param(params.w);
    let b = sess.param(params.b);
    let h = sess.tape.matmul(x, w)?;
    let h = sess.tape.add_bias(h, b)?;
    Ok(sess.tape.relu(h))
}

/// Click probability `sigmoid(x · w + b)`, shape `rows × 1`.
pub fn output_forward(sess: &mut Session<'_>, params: &OutputParams, x: Var) -> Result<Var> {
    let w = sess.param(params.w);
    let b = sess.param(params.b);
    let logit = sess.tape.matmul(x, w)?;
    let logit = sess.tape.add_bias(logit, b)?;
    Ok(sess.tape.sigmoid(logit))
}
