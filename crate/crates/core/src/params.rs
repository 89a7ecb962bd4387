//! Named parameter tensors and their binding onto a tape.

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;
use std::collections::HashMap;

/// Ordered collection of named tensors. Order is insertion order and is
/// the order used for serialization and optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::contract(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::contract(format!("missing parameter '{name}'"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor on `tape`, as tracked leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(name, t)| {
                let var = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Fan-in uniform weights `U(±1/√fan_in)` and zero bias for `x·W + b`.
    pub fn add_linear<R: Rng + ?Sized>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(format!("{prefix}.w"), Tensor::uniform(&[fan_in, fan_out], bound, rng))?;
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))
    }

    /// Bias-free linear map.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(name, Tensor::uniform(&[fan_in, fan_out], bound, rng))
    }

    pub fn add_layer_norm(&mut self, prefix: &str, width: usize) -> Result<()> {
        self.insert(format!("{prefix}.gain"), Tensor::filled(&[width], 1.0))?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[width]))
    }

    /// Stack of linear layers `widths[0] → widths[1] → …`.
    pub fn add_mlp<R: Rng + ?Sized>(&mut self, prefix: &str, widths: &[usize], rng: &mut R) -> Result<()> {
        for (i, pair) in widths.windows(2).enumerate() {
            self.add_linear(&format!("{prefix}.{i}"), pair[0], pair[1], rng)?;
        }
        Ok(())
    }
}

/// A [`ParamStore`] recorded on one tape.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    /// Pairs `vars` with the names of `store`, in store order.
    pub fn from_vars(store: &ParamStore, vars: &[Var]) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::contract(format!("{} vars for {} parameters", vars.len(), store.len())));
        }
        let vars = store.iter().zip(vars).map(|((n, _), &v)| (n.to_string(), v)).collect();
        Ok(Bound { vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter '{name}' is not bound")))
    }

    pub fn linear(&self, tape: &mut Tape, prefix: &str, x: Var) -> Result<Var> {
        let w = self.get(&format!("{prefix}.w"))?;
        let b = self.get(&format!("{prefix}.b"))?;
        tape.linear(x, w, b)
    }

    pub fn layer_norm(&self, tape: &mut Tape, prefix: &str, x: Var) -> Result<Var> {
        let g = self.get(&format!("{prefix}.gain"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        tape.layer_norm(x, g, b)
    }

    /// Applies `layers` linear maps from `prefix`, ReLU after each one
    /// except the last when `relu_last` is false.
    pub fn mlp(&self, tape: &mut Tape, prefix: &str, layers: usize, x: Var, relu_last: bool) -> Result<Var> {
        let mut h = x;
        for i in 0..layers {
            h = self.linear(tape, &format!("{prefix}.{i}"), h)?;
            if i + 1 < layers || relu_last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Gradients of every bound parameter, in store order.
    pub fn grads(&self, tape: &Tape, store: &ParamStore) -> Vec<Vec<f64>> {
        store
            .iter()
            .map(|(name, t)| {
                self.vars
                    .get(name)
                    .and_then(|&v| tape.grad(v))
                    .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
            })
            .collect()
    }
}
