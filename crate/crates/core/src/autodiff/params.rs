use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Shape plus flat row-major values, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named learnable tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, ParamEntry>", into = "BTreeMap<String, ParamEntry>")]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl From<BTreeMap<String, ParamEntry>> for ParamStore {
    fn from(map: BTreeMap<String, ParamEntry>) -> Self {
        let tensors = map
            .into_iter()
            .filter_map(|(k, e)| Tensor::try_new(e.shape, e.values).map(|t| (k, t)))
            .collect();
        Self { tensors }
    }
}

impl From<ParamStore> for BTreeMap<String, ParamEntry> {
    fn from(store: ParamStore) -> Self {
        store
            .tensors
            .into_iter()
            .map(|(k, t)| (k, ParamEntry { shape: t.shape().to_vec(), values: t.into_data() }))
            .collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Gaussian init with standard deviation `std`.
    pub fn normal<R: Rng>(&mut self, name: &str, shape: Vec<usize>, std: f64, rng: &mut R) {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::new(shape, data));
    }

    /// Glorot-scaled init for a `rows x cols` matrix.
    pub fn glorot<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        self.normal(name, vec![rows, cols], std, rng);
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn fill(&mut self, name: &str, shape: Vec<usize>, value: f64) {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![value; n]));
    }

    /// Registers every tensor on `tape`. Names for which `frozen` holds become
    /// constants.
    pub fn bind(&self, tape: &mut Tape, frozen: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if frozen(k) { tape.constant(t.clone()) } else { tape.leaf(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

/// Named handles built elsewhere, e.g. leaves created by a gradient check.
impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Bound { vars: iter.into_iter().collect() }
    }
}

impl Bound {
    /// Panics on an unknown name: parameter names are fixed by the model code.
    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Collects gradients by parameter name; missing ones are zero-filled.
    pub fn gradients(&self, store: &ParamStore, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let len = store.get(k).map(Tensor::len).unwrap_or(0);
                (k.clone(), grads.get_or_zeros(*v, len))
            })
            .collect()
    }
}
