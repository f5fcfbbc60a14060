//! Named parameter storage and binding onto a tape.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in declaration order, addressed by id or by name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.tensors[id.0].shape() {
            return Err(Error::Shape {
                op: "ParamStore::set",
                lhs: self.tensors[id.0].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Puts every parameter on `tape`. Parameters for which `trainable`
    /// returns false become constants and receive no gradient.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: impl Fn(&str) -> bool) -> Bound<'t, T> {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| {
                if trainable(name) {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Binds everything as trainable.
    pub fn bind_all<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        self.bind(tape, |_| true)
    }

    /// Uses caller-made variables, one per parameter in declaration order.
    pub fn bind_vars<'t>(&self, vars: Vec<Var<'t, T>>) -> Result<Bound<'t, T>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Length(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.tensors.len()
            )));
        }
        for ((v, t), name) in vars.iter().zip(&self.tensors).zip(&self.names) {
            if v.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "variable for {name} has shape {:?}, expected {:?}",
                    v.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Bound { vars })
    }
}

/// Parameters placed on a tape, indexed like their store.
#[derive(Clone, Debug)]
pub struct Bound<'t, T: Real = f64> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> &Var<'t, T> {
        &self.vars[id.0]
    }

    /// Gradient of every parameter, zeros where none reached it.
    pub fn grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_lookup_and_duplicates() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::zeros(&[2, 3])).unwrap();
        let b = store.add("b", Tensor::ones(&[4])).unwrap();
        assert_eq!(store.id("b"), Some(b));
        assert_eq!(store.name(a), "a");
        assert_eq!(store.numel(), 10);
        assert!(store.add("a", Tensor::zeros(&[1])).is_err());
        assert!(store.set(a, Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn frozen_parameters_get_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("train.a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = store.add("frozen.b", Tensor::vector(vec![3.0, 4.0])).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape, |n| n.starts_with("train"));
        let loss = bound.var(a).mul(bound.var(b)).unwrap().sum();
        let grads = tape.backward(&loss).unwrap();
        let all = bound.grads(&grads);
        assert_eq!(all[a.index()].data(), &[3.0, 4.0]);
        assert_eq!(all[b.index()].data(), &[0.0, 0.0]);
    }
}
