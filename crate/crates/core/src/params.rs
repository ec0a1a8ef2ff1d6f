//! Named parameter storage and per-step tape bindings.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which of the three parameter families a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Component weights and fusion-operation weights.
    Model,
    /// Connection logits.
    Connection,
    /// Operation logits.
    Operation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    group: ParamGroup,
    value: Tensor,
    grad: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.len()];
        self.entries.push(Entry {
            name: name.into(),
            group,
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::dim("set_value", entry.value.shape(), value.shape()));
        }
        entry.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds a step's gradients onto the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &ParamGrads) -> Result<()> {
        for (id, g) in &grads.entries {
            let entry = &mut self.entries[id.0];
            if entry.grad.len() != g.len() {
                return Err(Error::Contract(alloc::format!(
                    "gradient for {} has {} entries, expected {}",
                    entry.name,
                    g.len(),
                    entry.grad.len()
                )));
            }
            entry.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// Copies every parameter value from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Contract("parameter layouts differ".into()));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Contract(alloc::format!(
                    "parameter {} does not match {}",
                    dst.name,
                    src.name
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn total_size(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.value.len())
            .sum()
    }
}

/// Gradients for the parameters bound during one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads {
    pub entries: Vec<(ParamId, Vec<f64>)>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }
}

/// One forward/backward context: a fresh tape plus lazily bound parameters.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: Vec<ParamGroup>,
}

impl<'a> Session<'a> {
    /// Parameters of the listed groups become differentiable leaves; the
    /// rest enter the tape as constants.
    pub fn new(store: &'a ParamStore, trainable: &[ParamGroup]) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            trainable: trainable.to_vec(),
        }
    }

    pub fn inference(store: &'a ParamStore) -> Self {
        Self::new(store, &[])
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let requires_grad = self.trainable.contains(&self.store.group(id));
        let v = self.tape.leaf(self.store.value(id).clone(), requires_grad);
        self.bound[id.0] = Some(v);
        v
    }

    /// Parameters bound so far, in id order.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }

    pub fn backward(&mut self, loss: Var) -> Result<ParamGrads> {
        let mut grads = self.tape.backward(loss)?;
        let mut entries = Vec::new();
        for (id, var) in self.bound_params() {
            if !self.tape.requires_grad(var) {
                continue;
            }
            let g = grads
                .take(var)
                .unwrap_or_else(|| vec![0.0; self.store.value(id).len()]);
            entries.push((id, g));
        }
        Ok(ParamGrads { entries })
    }
}
