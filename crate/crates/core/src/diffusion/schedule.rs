use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_STEPS: usize = 1000;
/// Offset `s` of the cosine rule, keeping `β` small near `k = 0`.
pub const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Cumulative signal fractions `ᾱ[k]`, `k = 0..K`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `f(u) = cos²((u + s)/(1 + s) · π/2)`, `β_k = min(1 − f((k+1)/K)/f(k/K), 0.999)`,
    /// `ᾱ[k] = ∏_{j≤k} (1 − β_j)`.
    pub fn cosine(steps: usize) -> Self {
        let f = |u: f64| ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos().powi(2);
        let mut acc = 1.0;
        let alpha_bar = (0..steps)
            .map(|k| {
                let beta = (1.0 - f((k + 1) as f64 / steps as f64) / f(k as f64 / steps as f64)).min(MAX_BETA);
                acc *= 1.0 - beta;
                acc
            })
            .collect();
        Self { alpha_bar }
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }

    pub fn alpha_bar(&self, k: usize) -> Result<f64> {
        self.alpha_bar.get(k).copied().ok_or(Error::Index {
            index: k,
            len: self.alpha_bar.len(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Normalized time `k / K` fed to the model.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.len() as f64
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::cosine(DEFAULT_STEPS)
    }
}

/// `√ᾱ[k]·z0 + √(1−ᾱ[k])·eps`.
pub fn add_noise(z0: &Tensor, k: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if eps.shape() != z0.shape() {
        return Err(Error::Dimension {
            op: "add_noise",
            lhs: z0.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let ab = sched.alpha_bar(k)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + b * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}
