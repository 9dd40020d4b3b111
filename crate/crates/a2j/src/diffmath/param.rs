//! Named learnable parameters with paired gradient storage.

use super::ndarray::{NdArray, Real};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Handle into a [`ParamStore`]. Stable for the lifetime of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable value and its gradient; the two always share a shape.
#[derive(Clone)]
pub struct Param<R> {
    pub value: NdArray<R>,
    pub grad: NdArray<R>,
}

impl<R: Real> Param<R> {
    pub fn new(value: NdArray<R>) -> Self {
        let grad = NdArray::zeros(value.shape());
        Param { value, grad }
    }
}

/// Registration-ordered collection of named parameters. Registration order is
/// the canonical order for checkpoints and optimizer state.
pub struct ParamStore<R> {
    params: Vec<(String, Param<R>)>,
    by_name: HashMap<String, usize>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: NdArray<R>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(name, "duplicate parameter name"));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id.0);
        self.params.push((name, Param::new(value)));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].0
    }

    pub fn value(&self, id: ParamId) -> &NdArray<R> {
        &self.params[id.0].1.value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut NdArray<R> {
        &mut self.params[id.0].1.value
    }

    pub fn grad(&self, id: ParamId) -> &NdArray<R> {
        &self.params[id.0].1.grad
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<R>)> {
        self.params.iter().map(|(n, p)| (n.as_str(), p))
    }

    /// Zero every gradient; called at the start of each optimization step.
    pub fn zero_grads(&mut self) {
        for (_, p) in self.params.iter_mut() {
            p.grad.data_mut().fill(R::zero());
        }
    }

    /// Scale every gradient in place (batch averaging).
    pub fn scale_grads(&mut self, factor: R) {
        for (_, p) in self.params.iter_mut() {
            for v in p.grad.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &NdArray<R>) -> Result<()> {
        self.params[id.0].1.grad.add_assign(g)
    }

    /// Total number of scalar parameter entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Snapshot of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<NdArray<R>> {
        self.params.iter().map(|(_, p)| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[NdArray<R>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "snapshot has {} params, store has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for ((_, p), s) in self.params.iter_mut().zip(snapshot) {
            if p.value.shape() != s.shape() {
                return Err(Error::shapes(p.value.shape(), s.shape()));
            }
            p.value = s.clone();
        }
        Ok(())
    }
}
