//! Named trainable parameters and the Adam optimizer.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
    #[serde(skip)]
    first_moment: Vec<f64>,
    #[serde(skip)]
    second_moment: Vec<f64>,
    #[serde(skip)]
    steps: u64,
}

/// Every trainable tensor of a model, keyed by a unique name, together with
/// the per-parameter Adam state.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let n = value.len();
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value: value.with_grad(true),
            trainable: true,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            steps: 0,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].name
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.entries[i].value)
    }

    pub fn by_id(&self, id: usize) -> &Tensor {
        &self.entries[id].value
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let id = self.id(name)?;
        Some(&mut self.entries[id].value)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        self.entries[id].trainable = trainable;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.id(name).is_some_and(|i| self.entries[i].trainable)
    }

    pub fn steps(&self, name: &str) -> Option<u64> {
        self.id(name).map(|i| self.entries[i].steps)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Zero-filled gradients keyed like this store.
    pub fn zero_gradients(&self) -> Gradients {
        let mut g = Gradients::default();
        for e in &self.entries {
            g.map.insert(e.name.clone(), Tensor::zeros(e.value.shape()));
        }
        g
    }

    /// Parameter values only, in insertion order (optimizer state is not
    /// part of a checkpoint).
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect()
    }

    pub fn from_snapshot(items: Vec<(String, Tensor)>) -> Result<Self> {
        let mut store = ParameterStore::new();
        for (name, t) in items {
            store.insert(name, t)?;
        }
        Ok(store)
    }
}

/// Gradient map keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.map.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// `self += other`, key by key. Keys only in `other` are copied over.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (k, g) in &other.map {
            match self.map.get_mut(k) {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => {
                    self.map.insert(k.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }
}

/// Adam settings. Defaults: β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidHyper(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidHyper(format!("{n} must lie in (0,1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidHyper("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every trainable parameter.
///
/// Every parameter must have a gradient under the same name; frozen
/// parameters keep their values but still require the key.
pub fn adam_step(store: &mut ParameterStore, grads: &Gradients, hyper: &AdamHyper) -> Result<()> {
    hyper.validate()?;
    for e in &store.entries {
        let g = grads
            .get(&e.name)
            .ok_or_else(|| Error::MissingGradient(e.name.clone()))?;
        if g.len() != e.value.len() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient for {} has {} values, expected {}", e.name, g.len(), e.value.len()),
            ));
        }
    }
    for e in store.entries.iter_mut().filter(|e| e.trainable) {
        let g = grads.get(&e.name).expect("checked above");
        e.steps += 1;
        let t = e.steps as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        let w = e.value.data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i];
            let m = hyper.beta1 * e.first_moment[i] + (1.0 - hyper.beta1) * gi;
            let v = hyper.beta2 * e.second_moment[i] + (1.0 - hyper.beta2) * gi * gi;
            e.first_moment[i] = m;
            e.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            w[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}
