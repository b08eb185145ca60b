//! Named parameter tensors and their binding onto a tape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Result, StoneError};
use crate::tensor::{Shape, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors for one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(StoneError::Contract(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.values[id.0];
        if slot.dims() != value.dims() {
            return Err(StoneError::dims("ParamStore::set", slot.dims(), value.dims()));
        }
        *slot = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a gradient-receiving leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Records every parameter as a constant leaf (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }
}

/// Parameters of one store recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradient for every parameter, in store order; unused ones are zero.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// Deterministic initializer: Glorot-uniform weights, zero (or fixed) biases.
pub struct ParamBuilder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    /// `[out×in]` weight drawn from U(±√(6/(in+out))).
    pub fn glorot(&mut self, name: &str, out_dim: usize, in_dim: usize) -> Result<ParamId> {
        let bound = Self::glorot_bound(in_dim, out_dim);
        let data = (0..out_dim * in_dim)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.store.insert(name, Tensor::from_vec(&[out_dim, in_dim], data)?)
    }

    pub fn filled(&mut self, name: &str, dims: &[usize], value: f64) -> Result<ParamId> {
        Shape::new(dims)?;
        self.store.insert(name, Tensor::full(dims, value))
    }

    pub fn zeros(&mut self, name: &str, dims: &[usize]) -> Result<ParamId> {
        self.filled(name, dims, 0.0)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_store() {
        let build = |seed| {
            let mut b = ParamBuilder::new(seed);
            b.glorot("w", 16, 8).unwrap();
            b.zeros("b", &[16]).unwrap();
            b.finish()
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }

    #[test]
    fn glorot_range_for_square_layer() {
        let mut b = ParamBuilder::new(11);
        let id = b.glorot("w", 128, 128).unwrap();
        let store = b.finish();
        let bound = (6.0f64 / 256.0).sqrt();
        let w = store.get(id);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // the draw actually spans most of the interval
        let max = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.95 * bound);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn set_keeps_shape() {
        let mut s = ParamStore::new();
        let id = s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.set(id, Tensor::zeros(&[3])).is_err());
        s.set(id, Tensor::full(&[2], 1.0)).unwrap();
        assert_eq!(s.by_name("a").unwrap().data(), &[1.0, 1.0]);
    }
}
