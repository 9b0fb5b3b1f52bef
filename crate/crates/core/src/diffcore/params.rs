use std::collections::HashMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable tensors, each carrying a gradient buffer.
///
/// Registration order is stable and defines the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Usage(format!("parameter {name:?} registered twice")));
        }
        tensor.require_grad();
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values over all parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(move |(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds `grads` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &ParamGrads<F>) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            if let (Some(buf), Some(g)) = (t.grad_mut(), g) {
                for (b, &x) in buf.iter_mut().zip(g) {
                    *b = *b + x;
                }
            }
        }
    }

    /// Same parameters converted to another element type.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Per-parameter gradients produced by one backward pass.
///
/// `None` means the parameter was not reached; it reads as all zeros.
#[derive(Clone, Debug)]
pub struct ParamGrads<F>(pub(crate) Vec<Option<Vec<F>>>);

impl<F: Scalar> ParamGrads<F> {
    pub fn empty(count: usize) -> Self {
        ParamGrads(vec![None; count])
    }

    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `id` as a dense vector (zeros if unreached).
    pub fn dense(&self, id: ParamId, len: usize) -> Vec<F> {
        self.get(id)
            .map(<[F]>::to_vec)
            .unwrap_or_else(|| vec![F::zero(); len])
    }

    pub fn is_reached(&self, id: ParamId) -> bool {
        self.get(id).is_some()
    }

    /// Elementwise sum; `other` is added into `self`.
    pub fn add_assign(&mut self, other: &ParamGrads<F>) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            match (mine.as_mut(), theirs) {
                (_, None) => {}
                (None, Some(t)) => *mine = Some(t.clone()),
                (Some(m), Some(t)) => m.iter_mut().zip(t).for_each(|(a, &b)| *a = *a + b),
            }
        }
    }

    pub(crate) fn add_slice(&mut self, id: ParamId, g: &[F]) {
        if self.0.len() <= id.0 {
            self.0.resize(id.0 + 1, None);
        }
        match &mut self.0[id.0] {
            Some(m) => m.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.0.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = *x * factor);
        }
    }
}
