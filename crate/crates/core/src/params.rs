use std::collections::BTreeMap;

use crate::autograd::Graph;
use crate::error::{Result, TarError};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Set by [`ParamStore::load_grads`], cleared by [`ParamStore::zero_grads`].
    pub grad_ready: bool,
}

/// Named trainable tensors with paired gradients. Iteration is
/// lexicographic by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let grad = Tensor::zeros(value.shape());
        self.params.insert(
            name.into(),
            Param {
                value,
                grad,
                grad_ready: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TarError::contract(format!("unknown parameter {name}")))
    }

    /// Replace a parameter value; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| TarError::contract(format!("unknown parameter {name}")))?;
        p.value.expect_same_shape(&value, name)?;
        p.value = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Copy the named parameter gradients of a finished backward pass in.
    pub fn load_grads(&mut self, graph: &Graph<T>) -> Result<()> {
        for (name, g) in graph.param_grads() {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| TarError::contract(format!("graph parameter {name} not in store")))?;
            p.value.expect_same_shape(&g, name)?;
            p.grad = g;
            p.grad_ready = true;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|v| *v = T::zero());
            p.grad_ready = false;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, p) in &self.params {
            out.insert(k.clone(), p.value.cast());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.all_finite())
    }
}
