use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    trainable: bool,
}

/// Named learnable tensors with gradient accumulators, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.push(Entry {
            name,
            value,
            grad,
            trainable: true,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::Index(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(self.value(self.id(name)?))
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Freezes or unfreezes every parameter whose name satisfies `pred`.
    pub fn set_trainable_where(&mut self, trainable: bool, mut pred: impl FnMut(&str) -> bool) {
        for e in &mut self.entries {
            if pred(&e.name) {
                e.trainable = trainable;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64], scale: f64) {
        for (a, b) in self.entries[id.0].grad.data_mut().iter_mut().zip(g) {
            *a += scale * b;
        }
    }

    /// Adds `scale ·` every gradient of `other` into this store's gradients.
    pub fn accumulate_from(&mut self, other: &ParameterStore, scale: f64) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Contract("parameter stores differ in layout".into()));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            for (a, b) in dst.grad.data_mut().iter_mut().zip(src.grad.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, scale: f64) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// `(name, shape)` in insertion order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.shape().to_vec()))
            .collect()
    }

    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Overwrites values by name; every loaded tensor must exist here with the same shape.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        for (name, t) in values {
            let id = self.id(&name)?;
            let current = &self.entries[id.0].value;
            if current.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load_values",
                    lhs: current.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            self.entries[id.0].value = t;
        }
        Ok(())
    }
}
