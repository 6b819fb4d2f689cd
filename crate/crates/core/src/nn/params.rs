use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

/// Named parameter tensors in a stable (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
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

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.tensors.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.tensors.retain(|k, _| keep(k));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// SHA-256 over names, shapes and exact bit patterns of the selected tensors.
    pub fn digest(&self, select: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| select(n)) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Normal(0, std) truncated to two standard deviations, rounded through f32.
pub fn trunc_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break (z * std) as f32 as f64;
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), rounded through f32.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..bound) as f32 as f64)
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}
