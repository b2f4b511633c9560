//! Named storage for every trainable tensor of a model.
//!
//! Parameters live here between training steps as plain tensors; each step
//! lifts them onto a fresh tape as grad-tracked leaves, and the optimizer
//! walks the store in insertion order so updates are deterministic.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.tensors[*idx]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let idx = self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.tensors[*idx]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Registers every parameter as a grad-tracked leaf on `tape`.
    pub fn lift<'t>(&self, tape: &'t Tape) -> Lifted<'t> {
        let mut vars = HashMap::with_capacity(self.names.len());
        let mut order = Vec::with_capacity(self.names.len());
        for (name, tensor) in self.iter() {
            let var = tape.leaf(tensor.clone());
            vars.insert(name.to_string(), var);
            order.push(name.to_string());
        }
        Lifted { vars, order }
    }

    /// Packs every parameter into one flat row tensor (store order), for
    /// finite-difference checks over the whole model.
    pub fn flatten(&self) -> Tensor {
        let mut values = Vec::with_capacity(self.scalar_count());
        for t in &self.tensors {
            values.extend_from_slice(t.values());
        }
        Tensor::row(values)
    }

    /// Writes a flat row tensor back into the parameter tensors.
    pub fn unflatten_into(&mut self, flat: &Tensor) {
        let mut offset = 0usize;
        for t in &mut self.tensors {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat.values()[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

impl Serialize for ParamStore {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<(&String, &Tensor)> = self.names.iter().zip(self.tensors.iter()).collect();
        entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamStore {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries: Vec<(String, Tensor)> = Vec::deserialize(deserializer)?;
        let mut store = ParamStore::new();
        for (name, tensor) in entries {
            store.insert(name, tensor);
        }
        Ok(store)
    }
}

/// Tape handles for every parameter of a store.
pub struct Lifted<'t> {
    vars: HashMap<String, Var<'t>>,
    order: Vec<String>,
}

impl<'t> Lifted<'t> {
    pub fn var(&self, name: &str) -> Var<'t> {
        *self.vars.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    /// Assembles a lifted view from explicit vars (slices of a packed leaf,
    /// for whole-model gradient checks).
    pub fn from_pairs(pairs: Vec<(String, Var<'t>)>) -> Self {
        let order: Vec<String> = pairs.iter().map(|(n, _)| n.clone()).collect();
        Lifted { vars: pairs.into_iter().collect(), order }
    }
}
