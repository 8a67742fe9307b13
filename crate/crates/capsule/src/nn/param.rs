//! Learnable parameters and deterministic, name-keyed initialization.
//!
//! Every parameter owns its value and gradient buffer and carries a unique
//! path-style name ("cnn.conv0.weight"). Initialization draws from a stream
//! seeded by `hash(master_seed, name)`, so values do not depend on the order
//! in which parameters are created.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// 64-bit FNV-1a over arbitrary byte chunks. Stable across runs and platforms.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separator so ("ab","c") != ("a","bc").
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seeded generator for a (master seed, name) pair.
pub fn seeded_rng(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stable_hash(&[&seed.to_le_bytes(), name.as_bytes()]))
}

/// A tensor of learnable values plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn full(name: impl Into<String>, shape: &[usize], fill: f32) -> Self {
        Self::new(name, ArrayD::from_elem(IxDyn(shape), fill))
    }

    /// Uniform in [-bound, bound], drawn from the name-keyed stream.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f32, seed: u64) -> Self {
        let name = name.into();
        let mut rng = seeded_rng(seed, &name);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap())
    }

    /// Kaiming-uniform for layers followed by ReLU: bound = sqrt(6 / fan_in).
    pub fn kaiming(name: impl Into<String>, shape: &[usize], fan_in: usize, seed: u64) -> Self {
        let bound = (6.0 / fan_in.max(1) as f32).sqrt();
        Self::uniform(name, shape, bound, seed)
    }

    /// Gaussian N(0, std^2), used for token/position embeddings.
    pub fn normal(name: impl Into<String>, shape: &[usize], std: f32, seed: u64) -> Self {
        let name = name.into();
        let mut rng = seeded_rng(seed, &name);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| gaussian(&mut rng) * std).collect();
        Self::new(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap())
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn n_elements(&self) -> usize {
        self.value.len()
    }
}

/// Box-Muller transform; two uniform draws per sample keep the stream simple.
fn gaussian(rng: &mut ChaCha12Rng) -> f32 {
    loop {
        let u1: f32 = rng.random_range(f32::EPSILON..1.0);
        let u2: f32 = rng.random_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos();
        if z.is_finite() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_hash_separates_chunk_boundaries() {
        assert_ne!(stable_hash(&[b"ab", b"c"]), stable_hash(&[b"a", b"bc"]));
        assert_eq!(stable_hash(&[b"ab", b"c"]), stable_hash(&[b"ab", b"c"]));
    }

    #[test]
    fn init_is_name_keyed_not_order_keyed() {
        let a1 = Param::uniform("w.a", &[4, 3], 0.5, 7);
        let b = Param::uniform("w.b", &[4, 3], 0.5, 7);
        let a2 = Param::uniform("w.a", &[4, 3], 0.5, 7);
        assert_eq!(a1.value, a2.value);
        assert_ne!(a1.value, b.value);
    }

    #[test]
    fn uniform_respects_bound() {
        let p = Param::uniform("w", &[1000], 0.25, 3);
        assert!(p.value.iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn normal_is_roughly_centered() {
        let p = Param::normal("w", &[4096], 1.0, 11);
        let mean = p.value.iter().sum::<f32>() / 4096.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
    }
}
