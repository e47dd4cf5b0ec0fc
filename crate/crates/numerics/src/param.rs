use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph};
use crate::real::Real;
use crate::tensor::Tensor;

/// A named trainable tensor. `grad` is `None` until a backward pass has been
/// accumulated into it.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(())
    }

    /// Adds `{prefix}.weight` (He-initialized `c_out×c_in×k×k`) and a zero
    /// `{prefix}.bias`.
    pub fn add_conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, seed: u64) -> Result<()> {
        self.insert(format!("{prefix}.weight"), he_init(&[c_out, c_in, k, k], seed))?;
        self.insert(format!("{prefix}.bias"), he_init(&[c_out], seed))
    }

    /// Adds `{prefix}.weight` (He-initialized `out×in`) and a zero
    /// `{prefix}.bias`.
    pub fn add_linear(&mut self, prefix: &str, n_in: usize, n_out: usize, seed: u64) -> Result<()> {
        self.insert(format!("{prefix}.weight"), he_init(&[n_out, n_in], seed))?;
        self.insert(format!("{prefix}.bias"), he_init(&[n_out], seed))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, idx: usize) -> &Parameter<T> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter<T> {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        Ok(&mut self.params[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every gradient to zero (allocated, so an all-zero step is valid).
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds `scale ×` the gradient of every parameter leaf of `graph` into
    /// the matching parameter, in leaf creation order.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, grads: &Gradients<T>, scale: T) -> Result<()> {
        for (var, idx) in graph.param_leaves() {
            let Some(g) = grads.get(var) else { continue };
            let p = &mut self.params[idx];
            match &mut p.grad {
                Some(existing) => existing.add_scaled(g, scale)?,
                slot @ None => {
                    let mut t = Tensor::zeros(p.value.shape());
                    t.add_scaled(g, scale)?;
                    *slot = Some(t);
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.value.cast())
                .expect("names already unique");
        }
        out
    }
}

/// He (Kaiming) normal initialization: zero mean, variance `2 / fan_in`,
/// where `fan_in` is the product of all extents after the first. Rank-1
/// shapes are biases and come back as zeros.
pub fn he_init<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    if shape.len() <= 1 {
        return Tensor::zeros(shape);
    }
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::of(normal.sample(&mut rng)))
}
