use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named array owned by a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Glorot-uniform over `[-sqrt(6/(fan_in+fan_out)), +sqrt(..)]`.
    XavierUniform,
    /// Normal(0, sigma), used for embedding tables.
    Normal(f64),
    Zeros,
    Ones,
}

/// Ordered collection of named parameters. Names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Adds a rank-2 parameter filled per `init`.
    pub fn init(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let n = rows * cols;
        let data: Vec<f64> = match init {
            Init::XavierUniform => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
            Init::Normal(sigma) => {
                let dist = Normal::new(0.0, sigma)
                    .map_err(|e| Error::Contract(format!("bad init sigma: {e}")))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        self.add(name, Tensor::new(vec![rows, cols], data)?, true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies values from `other` by name; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .index
                .get(&p.name)
                .map(|&i| &other.params[i])
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape("load_from", p.value.shape(), src.value.shape()));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

/// Gradient buffers parallel to a [`ParamStore`]. Accumulates until zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore {
    grads: Vec<Tensor>,
}

impl GradStore {
    pub fn for_params(params: &ParamStore) -> Self {
        GradStore {
            grads: params
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn add(&mut self, other: &GradStore) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| g.scale_in_place(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1, 1]), true).unwrap();
        assert!(store.add("w", Tensor::zeros(&[1, 1]), true).is_err());
    }

    #[test]
    fn xavier_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let id = store.init("w", 10, 20, Init::XavierUniform, &mut rng).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(store.value(id).data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn clip_scales_to_unit_norm() {
        let mut store = ParamStore::new();
        let id = store.add("g", Tensor::zeros(&[1, 2]), true).unwrap();
        let mut grads = GradStore::for_params(&store);
        grads.get_mut(id).data_mut().copy_from_slice(&[6.0, 8.0]);
        let before = grads.clip_global_norm(1.0);
        assert!((before - 10.0).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
        assert!((grads.get(id).data()[0] - 0.6).abs() < 1e-12);
    }
}
