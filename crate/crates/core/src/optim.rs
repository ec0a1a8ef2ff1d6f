//! Adam with bias correction and per-parameter step counters.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u32,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Per-group learning rates overriding `learning_rate`.
    group_rates: Vec<(ParamGroup, f64)>,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            group_rates: Vec::new(),
            state: Vec::new(),
        }
    }

    pub fn with_group_rate(mut self, group: ParamGroup, rate: f64) -> Self {
        self.group_rates.retain(|(g, _)| *g != group);
        self.group_rates.push((group, rate));
        self
    }

    pub fn rate_for(&self, group: ParamGroup) -> f64 {
        self.group_rates
            .iter()
            .find(|(g, _)| *g == group)
            .map_or(self.learning_rate, |(_, r)| *r)
    }

    /// Number of updates applied to `id` so far.
    pub fn steps(&self, id: ParamId) -> u32 {
        self.state
            .get(id.index())
            .and_then(|s| s.as_ref())
            .map_or(0, |m| m.steps)
    }

    /// Updates every parameter present in `grads`; the others keep their
    /// values and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        for (id, grad) in &grads.entries {
            let len = store.value(*id).len();
            if grad.len() != len {
                return Err(Error::Contract(format!(
                    "gradient for {} has {} entries, parameter has {len}",
                    store.name(*id),
                    grad.len()
                )));
            }
            let lr = self.rate_for(store.group(*id));
            let state = self.state[id.index()].get_or_insert_with(|| Moments {
                first: vec![0.0; len],
                second: vec![0.0; len],
                steps: 0,
            });
            if state.first.len() != len {
                return Err(Error::Contract(format!(
                    "optimizer state for {} does not match its shape",
                    store.name(*id)
                )));
            }
            state.steps += 1;
            let t = state.steps as i32;
            let c1 = 1.0 - libm::pow(self.beta1, t as f64);
            let c2 = 1.0 - libm::pow(self.beta2, t as f64);
            let value = store.value_mut(*id).data_mut();
            for k in 0..len {
                let g = grad[k];
                let m = &mut state.first[k];
                let v = &mut state.second[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                value[k] -= lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
            }
        }
        Ok(())
    }
}
