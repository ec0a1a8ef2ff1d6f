//! The over-parameterised model holding every candidate connection and
//! fusion operation, and its fixed-architecture specialisations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::architecture::{ArchitectureDescriptor, OpChoice};
use crate::autodiff::Var;
use crate::components::{
    cross_layer_forward, deep_layer_forward, embedding_forward, output_forward, CrossParams,
    DeepParams, EmbeddingParams, FieldSchema, OutputParams,
};
use crate::error::{Error, Result};
use crate::fusion::{
    fuse, gate, mix_operations, operation_probabilities, ComponentGraph, ComponentKind,
    ConnectionParams, FusionInputs, FusionParams, Gate, OpSet, OpWeights, OperationParams,
};
use crate::params::{ParamGroup, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Learned gates and operation mixture.
    Search,
    /// Descriptor connections with its operation probabilities mixed.
    RetrainSoft,
    /// Descriptor connections with the dominant operation only.
    RetrainHard,
    /// Descriptor evaluated exactly as written.
    Fixed,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Search => "search",
            Mode::RetrainSoft => "retrain_soft",
            Mode::RetrainHard => "retrain_hard",
            Mode::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupernetConfig {
    pub n: usize,
    pub with_s0: bool,
    pub mode: Mode,
    pub op_set: OpSet,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        SupernetConfig {
            n: 3,
            with_s0: true,
            mode: Mode::Search,
            op_set: OpSet::all(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    Cross(CrossParams),
    Deep(DeepParams),
    Output(OutputParams),
}

#[derive(Debug, Clone)]
struct Node {
    transform: Transform,
    fusion: FusionParams,
}

/// Parameters are allocated in the same order for every mode and
/// architecture, so one seed yields the same initial weights whether the
/// network searches, retrains or evaluates a preset.
#[derive(Debug, Clone)]
pub struct Supernet {
    config: SupernetConfig,
    schema: FieldSchema,
    graph: ComponentGraph,
    store: ParamStore,
    embedding: EmbeddingParams,
    /// Indexed by component id; `None` for the embedding.
    nodes: Vec<Option<Node>>,
    alpha: ParamId,
    beta: ParamId,
    descriptor: Option<ArchitectureDescriptor>,
    /// Components evaluated by [`Supernet::forward`].
    active: Vec<bool>,
}

impl Supernet {
    pub fn new(
        config: SupernetConfig,
        schema: FieldSchema,
        descriptor: Option<ArchitectureDescriptor>,
        seed: u64,
    ) -> Result<Self> {
        let graph = ComponentGraph::new(config.n, config.with_s0)?;
        let descriptor = match (config.mode, descriptor) {
            (Mode::Search, None) => None,
            (Mode::Search, Some(_)) => {
                return Err(Error::Argument("search mode takes no descriptor".into()));
            }
            (_, None) => {
                return Err(Error::Argument(format!(
                    "{} mode requires an architecture descriptor",
                    config.mode.name()
                )));
            }
            (mode, Some(d)) => {
                if d.graph() != &graph {
                    return Err(Error::Architecture(format!(
                        "descriptor has n = {}, with_s0 = {}; network has n = {}, with_s0 = {}",
                        d.n(),
                        d.with_s0(),
                        config.n,
                        config.with_s0
                    )));
                }
                d.validate(config.op_set)?;
                Some(if mode == Mode::RetrainHard {
                    d.to_hard()
                } else {
                    d
                })
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = schema.hidden_dim();
        let embedding = EmbeddingParams::init(&mut store, &mut rng, &schema, "E");
        let mut nodes = vec![None];
        for c in graph.components().iter().skip(1) {
            let transform = match c.kind {
                ComponentKind::Cross => {
                    Transform::Cross(CrossParams::init(&mut store, &mut rng, d, &c.name))
                }
                ComponentKind::Deep => {
                    Transform::Deep(DeepParams::init(&mut store, &mut rng, d, &c.name))
                }
                ComponentKind::Output => {
                    Transform::Output(OutputParams::init(&mut store, &mut rng, d, &c.name))
                }
                ComponentKind::Embedding => unreachable!("only component 0 embeds"),
            };
            let slots = graph.predecessors(c.id).len();
            let fusion = FusionParams::init(&mut store, &mut rng, slots, d, &c.name);
            nodes.push(Some(Node { transform, fusion }));
        }
        let alpha = store.add(
            "alpha",
            ParamGroup::Connection,
            ConnectionParams::init(&graph).to_tensor(),
        );
        let beta = store.add(
            "beta",
            ParamGroup::Operation,
            OperationParams::init(&graph).to_tensor(),
        );

        let active = match &descriptor {
            None => vec![true; graph.len()],
            Some(d) => d.reaches_output(),
        };
        Ok(Supernet {
            config,
            schema,
            graph,
            store,
            embedding,
            nodes,
            alpha,
            beta,
            descriptor,
            active,
        })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn schema(&self) -> &FieldSchema {
        &self.schema
    }

    pub fn graph(&self) -> &ComponentGraph {
        &self.graph
    }

    pub fn descriptor(&self) -> Option<&ArchitectureDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn alpha_id(&self) -> ParamId {
        self.alpha
    }

    pub fn beta_id(&self) -> ParamId {
        self.beta
    }

    pub fn alpha(&self) -> ConnectionParams {
        ConnectionParams::from_dense(&self.graph, self.store.value(self.alpha).data())
            .expect("alpha keeps its shape")
    }

    /// Only level-respecting entries are copied; the rest stay zero.
    pub fn set_alpha(&mut self, alpha: &ConnectionParams) -> Result<()> {
        let clean = ConnectionParams::from_dense(&self.graph, alpha.dense())?;
        self.store.set_value(self.alpha, clean.to_tensor())
    }

    pub fn beta(&self) -> OperationParams {
        OperationParams::from_dense(&self.graph, self.store.value(self.beta).data())
            .expect("beta keeps its shape")
    }

    pub fn set_beta(&mut self, beta: &OperationParams) -> Result<()> {
        self.store.set_value(self.beta, beta.to_tensor())
    }

    /// Named parameters of one component's transform (cross, deep or
    /// output layer) and its fusion weights.
    pub fn component_params(&self, id: usize) -> Option<ComponentParamIds> {
        let node = self.nodes.get(id)?.as_ref()?;
        let (w, b) = match node.transform {
            Transform::Cross(p) => (p.w, p.b),
            Transform::Deep(p) => (p.w, p.b),
            Transform::Output(p) => (p.w, p.b),
        };
        Some(ComponentParamIds {
            weight: w,
            bias: b,
            fusion: node.fusion,
        })
    }

    pub fn embedding_tables(&self) -> &[ParamId] {
        &self.embedding.tables
    }

    /// Click probabilities (`rows × 1`) for `rows` encoded samples laid out
    /// field-major per row.
    pub fn forward(&self, sess: &mut Session<'_>, indices: &[u32], rows: usize) -> Result<Var> {
        let d = self.schema.hidden_dim();
        let search = self.config.mode == Mode::Search;
        let (alpha, beta) = if search {
            (Some(sess.param(self.alpha)), Some(sess.param(self.beta)))
        } else {
            (None, None)
        };
        let mut outputs: Vec<Option<Var>> = vec![None; self.graph.len()];
        let x0 = embedding_forward(sess, &self.schema, &self.embedding, indices, rows)?;
        outputs[0] = Some(x0);

        for id in self.graph.fusion_capable() {
            if !self.active[id] {
                continue;
            }
            let node = self.nodes[id]
                .as_ref()
                .expect("fusion-capable components have nodes");
            let mut slots = Vec::new();
            for from in self.graph.predecessors(id) {
                let g = match (alpha, &self.descriptor) {
                    (Some(alpha), _) => {
                        let var = gate(&mut sess.tape, alpha, &self.graph, from, id)?;
                        Gate::Learned {
                            var,
                            value: sess.tape.value(var).item(),
                        }
                    }
                    (None, Some(desc)) if desc.has_edge(from, id) => Gate::Open,
                    _ => Gate::Closed,
                };
                slots.push((g, outputs[from]));
            }
            let inputs = FusionInputs::new(&mut sess.tape, &slots, rows, d)?;
            let params = Some(&node.fusion);
            let column = self.graph.fusion_column(id).expect("fusion-capable");
            let fused = match (beta, &self.descriptor) {
                (Some(beta), _) => {
                    let probs =
                        operation_probabilities(&mut sess.tape, beta, column, self.config.op_set)?;
                    mix_operations(
                        sess,
                        OpWeights::Learned(probs),
                        self.config.op_set,
                        params,
                        &inputs,
                    )?
                }
                (None, Some(desc)) => match desc.operations()[column] {
                    OpChoice::Hard(op) => fuse(sess, op, params, &inputs)?,
                    OpChoice::Soft(p) => mix_operations(
                        sess,
                        OpWeights::Fixed(p),
                        self.config.op_set,
                        params,
                        &inputs,
                    )?,
                },
                (None, None) => unreachable!("non-search networks always hold a descriptor"),
            };
            let out = match node.transform {
                Transform::Cross(p) => cross_layer_forward(sess, &p, x0, fused)?,
                Transform::Deep(p) => deep_layer_forward(sess, &p, fused)?,
                Transform::Output(p) => output_forward(sess, &p, fused)?,
            };
            outputs[id] = Some(out);
        }
        Ok(outputs[self.graph.output()].expect("the output is always evaluated"))
    }

    /// Inference in chunks of `batch_size` rows.
    pub fn predict(&self, indices: &[u32], batch_size: usize) -> Result<Vec<f64>> {
        let f = self.schema.num_fields();
        if indices.len() % f != 0 {
            return Err(Error::dim(
                "predict",
                &[indices.len() / f, f],
                &[indices.len()],
            ));
        }
        let batch_size = batch_size.max(1);
        let mut out = Vec::with_capacity(indices.len() / f);
        for chunk in indices.chunks(batch_size * f) {
            let mut sess = Session::inference(&self.store);
            let probs = self.forward(&mut sess, chunk, chunk.len() / f)?;
            out.extend_from_slice(sess.tape.value(probs).data());
        }
        Ok(out)
    }

    /// Multiplies every model (non-architecture) parameter by `factor`.
    pub fn scale_model_params(&mut self, factor: f64) {
        let ids: Vec<ParamId> = self
            .store
            .ids()
            .filter(|&id| self.store.group(id) == ParamGroup::Model)
            .collect();
        for id in ids {
            self.store.value_mut(id).scale_in_place(factor);
        }
    }

    pub fn num_model_params(&self) -> usize {
        self.store.total_size(ParamGroup::Model)
    }

    /// Overwrites a parameter by name; used by tests and checkpoint loading.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name}")))?;
        self.store.set_value(id, value)
    }
}

/// Parameter handles of one non-embedding component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentParamIds {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fusion: FusionParams,
}
