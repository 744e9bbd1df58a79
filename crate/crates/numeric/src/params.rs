use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::Archive;
use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
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

    /// Registers a tensor. Panics on a duplicate name, which is a model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Writes every tensor into `archive` under its name.
    pub fn export(&self, archive: &mut Archive) {
        for (name, t) in self.names.iter().zip(&self.tensors) {
            archive.put(name, t);
        }
    }

    /// Overwrites every tensor from `archive`; names and shapes must match.
    pub fn import(&mut self, archive: &Archive) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let loaded: Tensor<T> = archive.get(name)?;
            if loaded.shape() != t.shape() {
                return Err(invalid(
                    "import",
                    format!(
                        "parameter {name}: archive shape {:?}, model shape {:?}",
                        loaded.shape(),
                        t.shape()
                    ),
                ));
            }
            *t = loaded;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }
}

/// One forward pass: a fresh tape plus lazily bound parameters.
pub struct Session<'a, T> {
    pub tape: Tape<T>,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'a, T: Real> Session<'a, T> {
    /// `training` enables dropout, whose masks are drawn from `seed`.
    pub fn new(params: &'a ParamStore<T>, training: bool, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }

    /// Tape variable for a parameter, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.param(self.params.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        self.tape.dropout(x, p, &mut self.rng)
    }

    /// Gradients of `loss` for every parameter, zero for unused ones.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Tensor<T>>> {
        let mut g: Gradients<T> = self.tape.backward(loss)?;
        Ok(self
            .bound
            .iter()
            .enumerate()
            .map(|(i, b)| {
                b.and_then(|v| g.take(v))
                    .unwrap_or_else(|| Tensor::zeros(self.params.tensors[i].shape()))
            })
            .collect())
    }
}
