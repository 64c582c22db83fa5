//! Seeded random numbers with a fixed, versioned algorithm.
//!
//! Uniforms come from ChaCha8 (the `rand_chacha` stream cipher RNG, whose
//! output is specified bit-for-bit). Normals use the Box-Muller transform over
//! 53-bit uniforms, computed in `f64`; the second value of each pair is cached.
//! Any change to this recipe must bump [`RNG_ALGORITHM`].

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::Result;
use crate::tensor::Tensor;

/// Identifier written into manifests of artifacts that embed sampled noise.
pub const RNG_ALGORITHM: &str = "chacha8-boxmuller/1";

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent generator for sub-task `index` of a run seeded with `seed`.
    /// Parallel work items draw from `stream(seed, i)` so results do not
    /// depend on scheduling.
    pub fn stream(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(index.wrapping_add(1));
        Self { inner, spare: None }
    }

    /// Derive a fresh generator from this one's output.
    pub fn split(&mut self) -> Self {
        Self::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; the bias is < n / 2^64.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.normal() as f32;
        }
    }
}

/// Tensor of i.i.d. standard normal values.
pub fn gaussian_sample(rng: &mut Rng, dims: &[usize]) -> Result<Tensor> {
    let mut t = Tensor::zeros(dims.to_vec())?;
    rng.fill_normal(t.data_mut());
    Ok(t)
}
