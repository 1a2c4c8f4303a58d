use indexmap::IndexMap;

use crate::autodiff::{Gradients, Real, Tape, Tensor, Var};
use crate::error::{contract_err, dim_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Real = f32> {
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Named network weights in insertion order.
///
/// Order is part of the contract: gradients, optimizer moments and the
/// checkpoint payload are all aligned with it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    entries: IndexMap<String, ParamEntry<T>>,
}

/// Tape handles for every entry of a [`ModelParams`], same order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles created by the caller, one per parameter entry in order.
    /// Useful when the parameter values themselves are under test.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, index: usize) -> Var {
        self.vars[index]
    }

    /// Gradients aligned with the bound parameters; untouched entries get zeros.
    pub fn gradients<T: Real>(&self, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.take_or_zeros(v)).collect()
    }
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(contract_err!("duplicate parameter name {name:?}"));
        }
        self.entries.insert(name, ParamEntry { value, trainable });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| contract_err!("unknown parameter {name:?}"))?;
        entry.trainable = trainable;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Places every entry on the tape. Frozen entries become constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Bound> {
        let vars = self
            .entries
            .values()
            .map(|e| if e.trainable { tape.param(e.value.clone()) } else { tape.constant(e.value.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Same names and shapes with another element type.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), ParamEntry { value: e.value.cast(), trainable: e.trainable }))
                .collect(),
        }
    }

    pub(crate) fn check_aligned(&self, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(dim_err!("{} gradients for {} parameters", grads.len(), self.entries.len()));
        }
        for ((name, e), g) in self.entries.iter().zip(grads) {
            if e.value.shape() != g.shape() {
                return Err(dim_err!(
                    "gradient for {name:?} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    e.value.shape()
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_order_is_stable() {
        let mut p = ModelParams::<f32>::new();
        p.insert("b", Tensor::zeros(&[2]), true).unwrap();
        p.insert("a", Tensor::zeros(&[3]), false).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[1]), true).is_err());
        let names: Vec<_> = p.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(p.num_scalars(), 5);
    }
}
