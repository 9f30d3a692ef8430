use std::collections::HashMap;
use std::sync::Arc;

use super::BackboneError;
use crate::tensor::{Element, GradTape, Tensor, Var};

/// Ordered, named parameter tensors with a per-parameter trainable flag.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    trainable: Vec<bool>,
    index: Arc<HashMap<String, usize>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), trainable: Vec::new(), index: Arc::default() }
    }
}

impl<T: Element> ParamStore<T> {
    pub(crate) fn insert(&mut self, name: String, tensor: Tensor<T>) {
        debug_assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        Arc::make_mut(&mut self.index).insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        self.trainable.push(true);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<(), BackboneError> {
        let i = self.position(name).ok_or_else(|| BackboneError::UnknownParam(name.to_string()))?;
        if tensor.shape() != self.tensors[i].shape() {
            return Err(BackboneError::ParamShape {
                name: name.to_string(),
                expected: self.tensors[i].shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    pub(crate) fn set_at(&mut self, i: usize, tensor: Tensor<T>) {
        debug_assert_eq!(tensor.shape(), self.tensors[i].shape());
        self.tensors[i] = tensor;
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.trainable[i]
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<(), BackboneError> {
        let i = self.position(name).ok_or_else(|| BackboneError::UnknownParam(name.to_string()))?;
        self.trainable[i] = trainable;
        Ok(())
    }

    pub(crate) fn set_all_trainable(&mut self, f: impl Fn(&str) -> bool) {
        for (flag, name) in self.trainable.iter_mut().zip(&self.names) {
            *flag = f(name);
        }
    }

    /// Scalar count of trainable entries.
    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().zip(&self.trainable).filter(|(_, &t)| t).map(|(t, _)| t.numel()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            trainable: self.trainable.clone(),
            index: Arc::clone(&self.index),
        }
    }

    /// Places every parameter on `tape`. Trainable ones require gradients
    /// when `with_grad` is set; the rest enter as constants.
    pub fn bind(&self, tape: &GradTape<T>, with_grad: bool) -> BoundParams<T> {
        let vars = self
            .tensors
            .iter()
            .zip(&self.trainable)
            .map(|(t, &trainable)| tape.leaf(t.clone(), with_grad && trainable))
            .collect();
        BoundParams { vars, index: Arc::clone(&self.index) }
    }
}

impl<T: Element> ParamStore<T> {
    /// Wraps caller-made vars (one per parameter, in store order) so the
    /// forward functions can look them up by name.
    pub fn bind_vars(&self, vars: Vec<Var<T>>) -> Result<BoundParams<T>, BackboneError> {
        if vars.len() != self.len() {
            return Err(BackboneError::Config(format!("expected {} vars, got {}", self.len(), vars.len())));
        }
        for ((name, t), v) in self.iter().zip(&vars) {
            if v.shape() != t.shape() {
                return Err(BackboneError::ParamShape {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: v.shape().to_vec(),
                });
            }
        }
        Ok(BoundParams { vars, index: Arc::clone(&self.index) })
    }
}

/// Parameters placed on a tape for one forward pass.
pub struct BoundParams<T: Element = f32> {
    vars: Vec<Var<T>>,
    index: Arc<HashMap<String, usize>>,
}

impl<T: Element> BoundParams<T> {
    pub fn get(&self, name: &str) -> Result<&Var<T>, BackboneError> {
        self.index
            .get(name)
            .map(|&i| &self.vars[i])
            .ok_or_else(|| BackboneError::UnknownParam(name.to_string()))
    }

    /// Vars in store order.
    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}
