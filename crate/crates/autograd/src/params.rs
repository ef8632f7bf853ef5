use std::collections::HashMap;

use crate::error::{AutogradError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// programming error in model construction.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Lazily records parameters on a tape, once each.
pub struct Binding {
    vars: Vec<Option<Var>>,
    requires_grad: bool,
}

impl Binding {
    pub fn new(params: &ParamSet, requires_grad: bool) -> Self {
        Binding {
            vars: vec![None; params.len()],
            requires_grad,
        }
    }

    pub fn var(&mut self, tape: &mut Tape, params: &ParamSet, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = tape.leaf(params.get(id).clone(), self.requires_grad);
        self.vars[id.0] = Some(v);
        v
    }

    /// Gradients after `tape.backward`, aligned with `params`. Parameters
    /// never bound or not reached by the loss get exact zeros.
    pub fn gradients(&self, tape: &Tape, params: &ParamSet) -> Gradients {
        let values = params
            .ids()
            .map(|id| {
                let n = params.get(id).len();
                match self.vars[id.0].and_then(|v| tape.grad_slice(v)) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; n],
                }
            })
            .collect();
        Gradients { values }
    }
}

/// Flat gradient buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &ParamSet) -> Self {
        Gradients {
            values: params.ids().map(|id| vec![0.0; params.get(id).len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(AutogradError::StateMismatch(format!(
                "{} vs {} gradient buffers",
                self.values.len(),
                other.values.len()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.iter().map(Vec::as_slice)
    }
}
