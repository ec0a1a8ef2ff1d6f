//! Joint selection of weights, connections and operations, the sequential
//! ablation, and retraining of a discretized architecture.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::architecture::{discretize, ArchitectureDescriptor, Metadata, Variant};
use crate::components::FieldSchema;
use crate::data::{batches, Batch, EncodedDataset};
use crate::error::{Error, Result};
use crate::fusion::{ConnectionParams, OpSet, OperationParams};
use crate::metrics::{auc, logloss};
use crate::optim::Adam;
use crate::params::{ParamGrads, ParamGroup, ParamId, ParamStore, Session};
use crate::supernet::{Mode, Supernet, SupernetConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub selection_epochs: usize,
    pub retrain_epochs: usize,
    pub seed: u64,
    /// Epochs without a strict validation-AUC improvement before retraining
    /// stops.
    pub early_stop_patience: usize,
    /// Learning rate for connection and operation parameters; defaults to
    /// `learning_rate`.
    pub arch_learning_rate: Option<f64>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            l2: 0.0,
            batch_size: 4096,
            selection_epochs: 3,
            retrain_epochs: 10,
            seed: 0,
            early_stop_patience: 2,
            arch_learning_rate: None,
            eval_batch_size: 8192,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Argument(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        if let Some(r) = self.arch_learning_rate {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::Argument(format!(
                    "architecture learning rate must be non-negative, got {r}"
                )));
            }
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Argument("batch sizes must be at least 1".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> Adam {
        let arch = self.arch_learning_rate.unwrap_or(self.learning_rate);
        Adam::new(self.learning_rate)
            .with_group_rate(ParamGroup::Connection, arch)
            .with_group_rate(ParamGroup::Operation, arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Joint update of weights, connections and operations.
    Search,
    /// Sequential ablation, first phase: weights and connections.
    SearchConnections,
    /// Sequential ablation, second phase: weights and operations.
    SearchOperations,
    Retrain,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Search => "search",
            Stage::SearchConnections => "search_connections",
            Stage::SearchOperations => "search_operations",
            Stage::Retrain => "retrain",
        }
    }

    fn trainable(self) -> &'static [ParamGroup] {
        match self {
            Stage::Search => &[
                ParamGroup::Model,
                ParamGroup::Connection,
                ParamGroup::Operation,
            ],
            Stage::SearchConnections => &[ParamGroup::Model, ParamGroup::Connection],
            Stage::SearchOperations => &[ParamGroup::Model, ParamGroup::Operation],
            Stage::Retrain => &[ParamGroup::Model],
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
}

/// Mean clipped cross-entropy plus `l2 · Σ‖θ‖²` over `params`.
pub fn loss(probs: &[f64], labels: &[f64], params: &[&Tensor], l2: f64) -> Result<f64> {
    let data = logloss(labels, probs)?;
    Ok(data + l2 * params.iter().map(|t| t.sum_squares()).sum::<f64>())
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: f64,
    /// Parameters that received an optimizer update.
    pub updated: Vec<ParamId>,
}

/// Regularised batch loss and its gradients over `groups`.
///
/// The L2 term covers the model parameters used by this forward pass and is
/// added to their gradients analytically.
pub fn loss_and_gradients(
    net: &Supernet,
    batch: &Batch,
    l2: f64,
    groups: &[ParamGroup],
) -> Result<(f64, ParamGrads)> {
    let mut sess = Session::new(net.store(), groups);
    let probs = net.forward(&mut sess, &batch.indices, batch.len())?;
    let bce = sess.tape.bce_mean(probs, &batch.labels)?;
    let data = sess.tape.value(bce).item();
    let mut grads = sess.backward(bce)?;
    let mut penalty = 0.0;
    if l2 > 0.0 {
        for (id, g) in &mut grads.entries {
            if net.store().group(*id) != ParamGroup::Model {
                continue;
            }
            let theta = net.store().value(*id).data();
            penalty += l2 * net.store().value(*id).sum_squares();
            g.iter_mut()
                .zip(theta)
                .for_each(|(g, t)| *g += 2.0 * l2 * t);
        }
    }
    Ok((data + penalty, grads))
}

/// One forward/backward pass and one optimizer step over `groups`.
pub fn train_step(
    net: &mut Supernet,
    batch: &Batch,
    l2: f64,
    optimizer: &mut Adam,
    groups: &[ParamGroup],
) -> Result<StepReport> {
    let (loss, grads) = loss_and_gradients(net, batch, l2, groups)?;
    if !loss.is_finite()
        || grads
            .entries
            .iter()
            .any(|(_, g)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric(format!("training loss {loss}")));
    }
    optimizer.step(net.store_mut(), &grads)?;
    Ok(StepReport {
        loss,
        updated: grads.ids().collect(),
    })
}

/// Validation AUC and logloss of a frozen network.
pub fn evaluate(net: &Supernet, data: &EncodedDataset, batch_size: usize) -> Result<(f64, f64)> {
    let probs = net.predict(data.indices(), batch_size)?;
    let labels = data.labels_f64();
    Ok((auc(&labels, &probs)?, logloss(&labels, &probs)?))
}

fn mix_seed(seed: u64, stage: Stage, epoch: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ (stage.tag() << 48) ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn train_epoch(
    net: &mut Supernet,
    train: &EncodedDataset,
    cfg: &TrainConfig,
    optimizer: &mut Adam,
    stage: Stage,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (b, batch) in batches(
        train,
        cfg.batch_size,
        Some(mix_seed(cfg.seed, stage, epoch)),
    )?
    .enumerate()
    {
        let report =
            train_step(net, &batch, cfg.l2, optimizer, stage.trainable()).map_err(|e| match e {
                Error::Numeric(_) => Error::Divergence {
                    stage: String::from(stage.name()),
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                },
                other => other,
            })?;
        total += report.loss * batch.len() as f64;
    }
    Ok(total / train.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    net: &mut Supernet,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    optimizer: &mut Adam,
    stage: Stage,
    epochs: usize,
    observer: &mut dyn FnMut(&EpochRecord),
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    for epoch in 1..=epochs {
        let train_loss = train_epoch(net, train, cfg, optimizer, stage, epoch)?;
        let (val_auc, val_logloss) = evaluate(net, val, cfg.eval_batch_size)?;
        let record = EpochRecord {
            stage,
            epoch,
            train_loss,
            val_auc,
            val_logloss,
        };
        observer(&record);
        records.push(record);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub alpha: ConnectionParams,
    pub beta: OperationParams,
    pub records: Vec<EpochRecord>,
}

fn require_search(net: &Supernet) -> Result<()> {
    if net.mode() != Mode::Search {
        return Err(Error::Argument(format!(
            "selection needs a search network, got {}",
            net.mode().name()
        )));
    }
    Ok(())
}

/// Trains weights, connections and operations together for
/// `selection_epochs` passes, one optimizer step per mini-batch.
pub fn selection_stage(
    net: &mut Supernet,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    require_search(net)?;
    let mut optimizer = cfg.optimizer();
    let mut records = Vec::new();
    run_epochs(
        net,
        train,
        val,
        cfg,
        &mut optimizer,
        Stage::Search,
        cfg.selection_epochs,
        observer,
        &mut records,
    )?;
    Ok(SelectionOutcome {
        alpha: net.alpha(),
        beta: net.beta(),
        records,
    })
}

/// Learns connections with uniform operation weights, then operations with
/// the connections frozen; each phase runs `selection_epochs` passes and
/// the weights carry over between phases.
pub fn sequential_selection(
    net: &mut Supernet,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    require_search(net)?;
    let mut optimizer = cfg.optimizer();
    let mut records = Vec::new();
    run_epochs(
        net,
        train,
        val,
        cfg,
        &mut optimizer,
        Stage::SearchConnections,
        cfg.selection_epochs,
        observer,
        &mut records,
    )?;
    run_epochs(
        net,
        train,
        val,
        cfg,
        &mut optimizer,
        Stage::SearchOperations,
        cfg.selection_epochs,
        observer,
        &mut records,
    )?;
    Ok(SelectionOutcome {
        alpha: net.alpha(),
        beta: net.beta(),
        records,
    })
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_early: bool,
}

/// Trains the model weights of a fixed-architecture network with early
/// stopping on validation AUC, then restores the best epoch's weights.
pub fn retrain_stage(
    net: &mut Supernet,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RetrainOutcome> {
    cfg.validate()?;
    if net.mode() == Mode::Search {
        return Err(Error::Argument(
            "retraining needs a fixed architecture".into(),
        ));
    }
    let mut optimizer = cfg.optimizer();
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.retrain_epochs {
        run_epochs_single(
            net,
            train,
            val,
            cfg,
            &mut optimizer,
            epoch,
            observer,
            &mut records,
        )?;
        let val_auc = records.last().expect("just pushed").val_auc;
        if best.as_ref().is_none_or(|(_, b, _)| val_auc > *b) {
            best = Some((epoch, val_auc, net.store().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                stopped_early = epoch < cfg.retrain_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_val_auc) = match best {
        Some((e, a, store)) => {
            net.store_mut().copy_values_from(&store)?;
            (e, a)
        }
        None => (0, f64::NAN),
    };
    Ok(RetrainOutcome {
        records,
        best_epoch,
        best_val_auc,
        stopped_early,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_epochs_single(
    net: &mut Supernet,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    optimizer: &mut Adam,
    epoch: usize,
    observer: &mut dyn FnMut(&EpochRecord),
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    let train_loss = train_epoch(net, train, cfg, optimizer, Stage::Retrain, epoch)?;
    let (val_auc, val_logloss) = evaluate(net, val, cfg.eval_batch_size)?;
    let record = EpochRecord {
        stage: Stage::Retrain,
        epoch,
        train_loss,
        val_auc,
        val_logloss,
    };
    observer(&record);
    records.push(record);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    OneShot,
    Sequential,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::OneShot => "oneshot",
            Algorithm::Sequential => "sequential",
        }
    }
}

/// Network shape shared by search and retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub n: usize,
    pub with_s0: bool,
    pub op_set: OpSet,
}

impl NetworkShape {
    pub fn config(self, mode: Mode) -> SupernetConfig {
        SupernetConfig {
            n: self.n,
            with_s0: self.with_s0,
            mode,
            op_set: self.op_set,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub selection: SelectionOutcome,
    pub soft: ArchitectureDescriptor,
    pub hard: ArchitectureDescriptor,
}

/// Runs a selection algorithm from freshly initialised parameters and
/// discretizes the result both ways.
#[allow(clippy::too_many_arguments)]
pub fn search(
    schema: &FieldSchema,
    shape: NetworkShape,
    cfg: &TrainConfig,
    algorithm: Algorithm,
    train: &EncodedDataset,
    val: &EncodedDataset,
    dataset_tag: &str,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<SearchOutcome> {
    let mut net = Supernet::new(shape.config(Mode::Search), schema.clone(), None, cfg.seed)?;
    let selection = match algorithm {
        Algorithm::OneShot => selection_stage(&mut net, train, val, cfg, observer)?,
        Algorithm::Sequential => sequential_selection(&mut net, train, val, cfg, observer)?,
    };
    let metadata = |variant: Variant| Metadata {
        seed: cfg.seed,
        dataset: String::from(dataset_tag),
        stage: format!("{}:{}", algorithm.name(), variant.name()),
    };
    let graph = net.graph();
    let soft = discretize(
        graph,
        &selection.alpha,
        &selection.beta,
        Variant::Soft,
        shape.op_set,
        metadata(Variant::Soft),
    )?;
    let hard = discretize(
        graph,
        &selection.alpha,
        &selection.beta,
        Variant::Hard,
        shape.op_set,
        metadata(Variant::Hard),
    )?;
    Ok(SearchOutcome {
        selection,
        soft,
        hard,
    })
}

#[derive(Debug, Clone)]
pub struct RetrainResult {
    pub net: Supernet,
    pub outcome: RetrainOutcome,
    pub test_auc: f64,
    pub test_logloss: f64,
}

/// Retrains a descriptor from fresh weights and scores the best epoch on
/// the test split.
#[allow(clippy::too_many_arguments)]
pub fn retrain(
    schema: &FieldSchema,
    op_set: OpSet,
    descriptor: &ArchitectureDescriptor,
    mode: Mode,
    cfg: &TrainConfig,
    train: &EncodedDataset,
    val: &EncodedDataset,
    test: &EncodedDataset,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RetrainResult> {
    let shape = NetworkShape {
        n: descriptor.n(),
        with_s0: descriptor.with_s0(),
        op_set,
    };
    let mut net = Supernet::new(
        shape.config(mode),
        schema.clone(),
        Some(descriptor.clone()),
        cfg.seed,
    )?;
    let outcome = retrain_stage(&mut net, train, val, cfg, observer)?;
    let (test_auc, test_logloss) = evaluate(&net, test, cfg.eval_batch_size)?;
    Ok(RetrainResult {
        net,
        outcome,
        test_auc,
        test_logloss,
    })
}
