use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Trainable parameters with gradient and Adam moment slots.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Usage(format!(
                "parameter {name:?} already registered"
            )));
        }
        let n = value.len();
        let id = ParamId(self.slots.len());
        self.slots.push(Slot {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a parameter drawn uniformly from `[-bound, bound]`.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        self.insert(name, t)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0].grad
    }

    /// Adds `g` into the gradient slot of `id`; `g` must match its length.
    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        assert_eq!(g.len(), self.slots[id.0].grad.len(), "gradient length");
        for (a, b) in self.slots[id.0].grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grad(&mut self, factor: f64) {
        for s in &mut self.slots {
            s.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Adds another store's gradients slot-by-slot. Stores must share a layout.
    pub fn add_grads_from(&mut self, other: &ParamStore) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.grad.iter_mut().zip(&b.grad) {
                *x += y;
            }
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// One bias-corrected Adam update over every parameter, then zeroes gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if self.slots.is_empty() {
            return Err(Error::Usage("adam step on an empty parameter store".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for s in &mut self.slots {
            let data = s.value.data_mut();
            for i in 0..data.len() {
                let g = s.grad[i];
                s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
                s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = s.m[i] / bc1;
                let v_hat = s.v[i] / bc2;
                data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                s.grad[i] = 0.0;
            }
        }
        Ok(())
    }

    /// Name-ordered snapshot of parameter values.
    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.value.clone()))
            .collect()
    }

    /// Overwrites values from a snapshot; every name and shape must match.
    pub fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        if map.len() != self.slots.len() {
            return Err(Error::Load(format!(
                "checkpoint has {} parameters, model expects {}",
                map.len(),
                self.slots.len()
            )));
        }
        for s in &mut self.slots {
            let t = map
                .get(&s.name)
                .ok_or_else(|| Error::Load(format!("checkpoint lacks parameter {:?}", s.name)))?;
            if t.shape() != s.value.shape() {
                return Err(Error::Load(format!(
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    s.name,
                    t.shape(),
                    s.value.shape()
                )));
            }
            s.value = t.clone();
        }
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}
