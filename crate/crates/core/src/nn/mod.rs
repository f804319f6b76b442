//! Minimal neural-net building blocks with explicit forward caches and
//! hand-written backward passes. There is no general autograd here; the
//! network topologies in this crate are fixed, so each layer exposes
//! `forward -> (output, cache)` and `backward(cache, dout) -> din` plus
//! parameter-gradient accumulation into a [`GradStore`].

mod conv;
mod linear;
mod norm;
mod ops;

pub use conv::{Conv2d, Conv2dCache};
pub use linear::{Linear, LinearCache};
pub use norm::{CondBatchNorm, NormCache, NormMode};
pub use ops::{
    avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    tanh, tanh_backward, upsample2, upsample2_backward,
};

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::scalar::Scalar;

/// Named gradient accumulator. Keys follow the parameter naming scheme of the
/// owning network (e.g. `block0.conv.w`, `adapt.proj.gamma`).
#[derive(Debug, Clone)]
pub struct GradStore<T> {
    map: BTreeMap<String, ArrayD<T>>,
}

impl<T: Scalar> Default for GradStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradStore<T> {
    pub fn new() -> Self {
        GradStore {
            map: BTreeMap::new(),
        }
    }

    /// Accumulate `grad` into the named slot (adding if one exists).
    pub fn add(&mut self, name: &str, grad: ArrayD<T>) {
        match self.map.get_mut(name) {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), grad.shape(), "grad shape for {name}");
                *existing += &grad;
            }
            None => {
                self.map.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Scale every stored gradient (used to fold loss weights in).
    pub fn scale(&mut self, factor: T) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    /// Merge another store into this one, adding overlapping entries.
    pub fn merge(&mut self, other: GradStore<T>) {
        for (name, grad) in other.map {
            self.add(&name, grad);
        }
    }
}

/// Name and shape of one trainable parameter, as reported by
/// `trainable_parameters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamInfo {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
