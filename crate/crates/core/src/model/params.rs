use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat, ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a tape leaf, in store order.
    pub fn register(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Records every parameter as a constant (inference).
    pub fn register_frozen(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t)).collect()
    }

    /// Adds this pass's gradients into each parameter's grad slot.
    pub fn accumulate(&mut self, vars: &[Var], grads: &Gradients) -> Result<()> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Usage(format!("{} vars for {} parameters", vars.len(), self.tensors.len())));
        }
        for (t, v) in self.tensors.iter_mut().zip(vars) {
            match grads.get(*v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Overwrites values from `(name, tensor)` pairs; every parameter must
    /// be present with a matching shape.
    pub fn load_values(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        if entries.len() != self.tensors.len() {
            return Err(Error::config(
                "checkpoint",
                format!("holds {} tensors, model expects {}", entries.len(), self.tensors.len()),
            ));
        }
        for (name, t) in entries {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::config("checkpoint", format!("unknown parameter {name:?}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::config(
                    format!("checkpoint/{name}"),
                    format!("shape {:?} does not match model spec {:?}", t.shape(), self.tensors[i].shape()),
                ));
            }
            self.tensors[i].data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

/// He-style normal initialization, `std = sqrt(gain / fan_in)`.
pub(crate) fn he_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f32) -> Tensor {
    let std = (gain / fan_in as f32).sqrt();
    let normal = Normal::new(0.0f32, std).expect("positive std");
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("init shape")
}
