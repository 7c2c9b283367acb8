use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Learnable tensors addressed by dotted path, e.g.
/// `hlm.text.l2l.layer0.head3.Wq`. Iteration order is lexicographic by
/// path, which fixes the order of every reduction over parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    map: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) -> Result<()> {
        let path = path.into();
        if self.map.contains_key(&path) {
            return Err(Error::Config(format!("duplicate parameter path `{path}`")));
        }
        self.map.insert(path, t);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.map
            .get(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.map.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Bitwise equality of every value (treats `-0.0` and `0.0` as distinct).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.map.len() == other.map.len()
            && self.map.iter().zip(&other.map).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Per-parameter gradients, same paths and shapes as the [`ModelParams`]
/// they were taken against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            map: params
                .iter()
                .map(|(k, t)| (k.to_string(), vec![0.0; t.len()]))
                .collect(),
        }
    }

    pub fn get(&self, path: &str) -> Option<&[f64]> {
        self.map.get(path).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// `self += other`, path by path.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (k, v) in &mut self.map {
            if let Some(o) = other.map.get(k) {
                for (a, b) in v.iter_mut().zip(o) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.map.values_mut() {
            for x in v {
                *x *= s;
            }
        }
    }

    pub fn is_all_zero(&self, path: &str) -> bool {
        self.get(path).is_some_and(|g| g.iter().all(|&x| x == 0.0))
    }
}

/// One forward evaluation: a fresh tape plus lazily bound parameters.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ModelParams,
    bound: HashMap<String, Var>,
    differentiable: bool,
}

impl<'p> Session<'p> {
    /// Parameters are recorded as gradient-carrying leaves.
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: HashMap::new(),
            differentiable: true,
        }
    }

    /// Parameters are recorded as constants; backward touches nothing.
    pub fn forward_only(params: &'p ModelParams) -> Self {
        Self {
            differentiable: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    /// Binds `path` to the tape on first use; later calls return the same
    /// variable so gradients from every use site accumulate.
    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(path) {
            return Ok(*v);
        }
        let mut t = self.params.get(path)?.clone();
        t.requires_grad = self.differentiable;
        let v = self.tape.leaf(t);
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn is_bound(&self, path: &str) -> bool {
        self.bound.contains_key(path)
    }

    /// Gradients after `tape.backward`. Parameters never bound, or not
    /// reachable from the loss, get all-zero gradients.
    pub fn gradients(&self) -> Gradients {
        let mut out = Gradients::zeros_like(self.params);
        for (path, g) in &mut out.map {
            if let Some(src) = self.bound.get(path).and_then(|v| self.tape.grad(*v)) {
                g.copy_from_slice(src);
            }
        }
        out
    }
}
