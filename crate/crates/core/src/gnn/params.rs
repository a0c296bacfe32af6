use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor2D;

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2D>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2D) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.values[i] = value;
            return;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor2D] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor2D] {
        &mut self.values
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2D> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2D> {
        self.position(name).map(|i| &mut self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor2D::len).sum()
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))]
    }

    pub fn grads(&self, tape: &Tape) -> Vec<Tensor2D> {
        self.vars.iter().map(|&v| tape.grad(v)).collect()
    }
}
