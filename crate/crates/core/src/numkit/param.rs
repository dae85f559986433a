use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Array, NumError};

/// One trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone)]
pub(crate) struct Param {
    pub value: Array,
    pub grad: Array,
    pub m: Array,
    pub v: Array,
}

impl Param {
    fn new(value: Array) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Array::zeros(&shape),
            m: Array::zeros(&shape),
            v: Array::zeros(&shape),
        }
    }
}

/// Named map of trainable parameters.
///
/// Iteration order is always sorted by name, and each parameter's initial
/// values are drawn from an RNG derived from `(seed, name)`, so two stores
/// built with the same seed are bitwise identical regardless of the order
/// the model registers its tensors in.
#[derive(Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    seed: u64,
}

// FNV-1a, so the per-name seed derivation is stable across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()))
    }

    /// Insert a parameter with explicit values. Replaces any previous entry.
    pub fn insert(&mut self, name: &str, value: Array) {
        self.entries.insert(name.to_string(), Param::new(value));
    }

    /// Insert a parameter sampled uniformly from `[-bound, bound]`.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], bound: f64) {
        let mut rng = self.rng_for(name);
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
        let value = Array::new(shape.to_vec(), data).expect("init shape");
        self.insert(name, value);
    }

    /// Insert an all-zero parameter (used for biases).
    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Array::zeros(shape));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Array, NumError> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array, NumError> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Array, NumError> {
        self.entries
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    /// Names in deterministic (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, grad: &Array) {
        let p = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("accumulate_grad: unknown param {name}"));
        debug_assert_eq!(p.value.shape(), grad.shape());
        for (g, d) in p.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }
}
