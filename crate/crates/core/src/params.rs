//! Named parameter storage shared by every layer.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`]; a forward pass binds the
//! whole store onto a tape once and resolves ids to [`Var`]s through
//! [`Bound`].

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<S>>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor under a unique dotted name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(Arc::new(value));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    /// Replaces a tensor, keeping its name; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let current = &self.tensors[id.0];
        if current.shape() != value.shape() {
            return Err(Error::CheckpointMismatch {
                name: self.names[id.0].clone(),
                detail: format!("shape {:?} vs {:?}", current.shape(), value.shape()),
            });
        }
        self.tensors[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| &**t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.tensors.iter().map(|t| &**t)
    }

    /// Same names and shapes at another precision.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Copy of this store with every tensor replaced, in order.
    pub fn with_tensors(&self, tensors: Vec<Tensor<S>>) -> Self {
        assert_eq!(tensors.len(), self.tensors.len());
        for (old, new) in self.tensors.iter().zip(&tensors) {
            assert_eq!(old.shape(), new.shape());
        }
        Self {
            names: self.names.clone(),
            tensors: tensors.into_iter().map(Arc::new).collect(),
            index: self.index.clone(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
            tape,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

/// A [`ParamStore`] bound onto a tape.
pub struct Bound<'t, S: Scalar> {
    vars: Vec<Var<'t, S>>,
    tape: &'t Tape<S>,
}

impl<'t, S: Scalar> Bound<'t, S> {
    pub fn var(&self, id: ParamId) -> Var<'t, S> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, S>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }
}

/// Weight initialisers.
pub mod init {
    use super::*;

    /// `U(−1/√fan_in, 1/√fan_in)`.
    pub fn fan_in_uniform<S: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| S::lit(rng.uniform_in(-bound, bound)))
    }

    pub fn normal<S: Scalar>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<S> {
        rng.gaussian_tensor(shape, 0.0, std)
    }
}

/// A dense `x·W + b` layer.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            weight: store.add(
                format!("{prefix}.weight"),
                init::fan_in_uniform(rng, &[fan_in, fan_out], fan_in),
            ),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Var<'t, S> {
        x.matmul(p.var(self.weight)).add_bias(p.var(self.bias))
    }
}

/// LayerNorm scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// Layer-norm epsilon used everywhere in the model.
pub const LN_EPS: f64 = 1e-6;

impl Norm {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones(&[d])),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Var<'t, S> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta), S::lit(LN_EPS))
    }
}
