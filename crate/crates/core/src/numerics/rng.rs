//! Seeded random streams.
//!
//! The generator is ChaCha8 (`rand_chacha`), keyed from a `u64` seed through
//! `SeedableRng::seed_from_u64`. Derived quantities are computed here, not by
//! `rand` distributions, so the stream is fixed by this file alone:
//!
//! * uniform: top 53 bits of `next_u64`, scaled by 2⁻⁵³, in `[0, 1)`;
//! * normal: Box–Muller on two uniforms, `u1` mapped to `(0, 1]`; the sine
//!   variate is cached and returned by the next call;
//! * `below(n)`: multiply-shift of `next_u64` by `n`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    cached_normal: Option<f64>,
}

/// Serializable position of an [`Rng`] stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    /// Bit pattern of the cached Box–Muller variate.
    pub cached_normal: Option<u64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            cached_normal: None,
        }
    }

    /// Independent child stream keyed by `(parent seed, tag)`.
    pub fn derive(seed: u64, tag: u64) -> Self {
        Self::new(splitmix(seed ^ splitmix(tag)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.cached_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("shape product matches")
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            word_pos: self.inner.get_word_pos(),
            cached_normal: self.cached_normal.map(f64::to_bits),
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_word_pos(state.word_pos);
        Self {
            inner,
            cached_normal: state.cached_normal.map(f64::from_bits),
        }
    }
}

/// SplitMix64 finalizer, used to decorrelate derived seeds.
pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Rand normal tensor with an explicit generator (the free-function form).
pub fn rand_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape)
}
