use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Normal { std: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct Entry<F> {
    name: String,
    init: Init,
    value: Tensor<F>,
}

/// Named parameters of one model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: HashMap::new() }
    }

    /// Register a parameter and draw its initial value from `rng`.
    pub fn register<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<F> = match init {
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| F::of(dist.sample(rng))).collect()
            }
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
        };
        let value = Tensor::new(shape.to_vec(), data)?;
        let id = ParamId(self.entries.len());
        self.entries.push(Entry { name: name.to_string(), init, value });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn init(&self, id: ParamId) -> Init {
        self.entries[id.0].init
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    /// Replace a parameter's values, keeping its shape.
    pub fn set(&mut self, id: ParamId, data: &[F]) -> Result<()> {
        let v = self.value_mut(id);
        if v.len() != data.len() {
            return Err(Error::Shape(format!("set: {} values for shape {:?}", data.len(), v.shape())));
        }
        v.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Copy the values of `src` into `dst` (used to tie projections in tests).
    pub fn copy_value(&mut self, src: ParamId, dst: ParamId) -> Result<()> {
        let data = self.value(src).data().to_vec();
        self.set(dst, &data)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

/// Dense gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    bufs: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Gradients { bufs: store.ids().map(|id| vec![F::zero(); store.value(id).len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.bufs[id.0]
    }

    /// Add the parameter gradients recorded on `graph`.
    pub fn accumulate(&mut self, graph: &Graph<F>) {
        for (id, g) in graph.param_grads() {
            for (a, &b) in self.bufs[id.0].iter_mut().zip(g) {
                *a = *a + b;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    /// First parameter/coordinate holding a non-finite gradient.
    pub fn first_non_finite(&self) -> Option<(ParamId, usize)> {
        self.bufs.iter().enumerate().find_map(|(p, b)| {
            b.iter().position(|v| !v.is_finite()).map(|i| (ParamId(p), i))
        })
    }
}
