use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NumArray;
use crate::error::{PastError, Result};

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: NumArray,
    pub grad: NumArray,
}

/// How a freshly registered parameter is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zeros,
    /// Normal with the given standard deviation.
    Normal(f64),
    Constant(f64),
}

/// Named parameters, enumerated in sorted path order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.rng_seed == other.rng_seed && self.entries == other.entries
    }
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Register a parameter, drawing its initial value from the store's RNG.
    pub fn register(&mut self, path: &str, shape: &[usize], init: Init) -> Result<()> {
        let mut value = NumArray::zeros(shape);
        match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                for v in value.data_mut() {
                    *v = self.rng.random_range(-bound..=bound);
                }
            }
            Init::Zeros => {}
            Init::Normal(std) => {
                let normal = Normal::new(0.0, std)
                    .map_err(|e| PastError::InvalidConfig(e.to_string()))?;
                for v in value.data_mut() {
                    *v = normal.sample(&mut self.rng);
                }
            }
            Init::Constant(c) => value.fill(c),
        }
        self.insert(path, value)
    }

    pub fn insert(&mut self, path: &str, value: NumArray) -> Result<()> {
        if self.entries.contains_key(path) {
            return Err(PastError::InvalidConfig(format!(
                "duplicate parameter `{path}`"
            )));
        }
        let grad = NumArray::zeros(value.shape());
        self.entries.insert(path.to_string(), Param { value, grad });
        Ok(())
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn param(&self, path: &str) -> Result<&Param> {
        self.entries
            .get(path)
            .ok_or_else(|| PastError::Index(format!("unknown parameter `{path}`")))
    }

    pub fn param_mut(&mut self, path: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(path)
            .ok_or_else(|| PastError::Index(format!("unknown parameter `{path}`")))
    }

    pub fn value(&self, path: &str) -> Result<&NumArray> {
        Ok(&self.param(path)?.value)
    }

    pub fn value_mut(&mut self, path: &str) -> Result<&mut NumArray> {
        Ok(&mut self.param_mut(path)?.value)
    }

    pub fn grad(&self, path: &str) -> Result<&NumArray> {
        Ok(&self.param(path)?.grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Add `scale * g` into the gradient accumulators, in path order.
    pub fn accumulate(&mut self, grads: &GradMap, scale: f64) -> Result<()> {
        for (path, g) in &grads.entries {
            let p = self.param_mut(path)?;
            if p.grad.len() != g.len() {
                return Err(PastError::Shape(format!(
                    "gradient for `{path}` has {} entries, parameter has {}",
                    g.len(),
                    p.grad.len()
                )));
            }
            for (acc, v) in p.grad.data_mut().iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
        Ok(())
    }

    /// Snapshot of the current gradient accumulators.
    pub fn grads(&self) -> GradMap {
        GradMap {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), p.grad.data().to_vec()))
                .collect(),
        }
    }
}

/// Sparse-by-parameter gradient buffer used for per-window accumulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradMap {
    entries: BTreeMap<String, Vec<f64>>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mutable slot for `path`, created zeroed with `len` entries on first use.
    pub fn slot(&mut self, path: &str, len: usize) -> &mut [f64] {
        let v = self
            .entries
            .entry(path.to_string())
            .or_insert_with(|| vec![0.0; len]);
        debug_assert_eq!(v.len(), len, "gradient slot `{path}` resized");
        v
    }

    pub fn get(&self, path: &str) -> Option<&[f64]> {
        self.entries.get(path).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.entries.iter()
    }

    /// Element-wise sum, merging keys.
    pub fn add_assign(&mut self, other: &GradMap) {
        for (k, v) in &other.entries {
            let slot = self.slot(k, v.len());
            for (a, b) in slot.iter_mut().zip(v) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.entries.values_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_paths_rejected() {
        let mut ps = ParamStore::new(1);
        ps.register("a", &[2], Init::Zeros).unwrap();
        assert!(ps.register("a", &[2], Init::Zeros).is_err());
    }

    #[test]
    fn enumeration_is_sorted_and_seeded() {
        let build = |seed| {
            let mut ps = ParamStore::new(seed);
            ps.register("z/w", &[3, 3], Init::FanIn(3)).unwrap();
            ps.register("a/emb", &[4, 2], Init::Normal(0.02)).unwrap();
            ps.register("m/b", &[3], Init::Zeros).unwrap();
            ps
        };
        let a = build(5);
        let names: Vec<_> = a.paths().cloned().collect();
        assert_eq!(names, vec!["a/emb", "m/b", "z/w"]);
        assert_eq!(a, build(5));
        assert_ne!(a.value("z/w").unwrap(), build(6).value("z/w").unwrap());
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.value("z/w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(a.value("m/b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulate_scales_and_sums() {
        let mut ps = ParamStore::new(0);
        ps.register("p", &[2], Init::Zeros).unwrap();
        let mut g = GradMap::new();
        g.slot("p", 2).copy_from_slice(&[1.0, -2.0]);
        ps.accumulate(&g, 0.5).unwrap();
        ps.accumulate(&g, 0.5).unwrap();
        assert_eq!(ps.grad("p").unwrap().data(), &[1.0, -2.0]);
    }
}
