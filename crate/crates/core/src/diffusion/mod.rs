//! Noise schedule, denoising objective and the guided sampler.

mod sampler;
mod schedule;

pub use sampler::{cfg_combine, sample, sample_projected, CfgParams, Conditions, SamplerConfig, TraceRecord, X0Map};
pub use schedule::{add_noise, NoiseSchedule, COSINE_OFFSET, DEFAULT_STEPS};

use crate::audio::PackedAudio;
use crate::dit::TextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor, Var};

/// Conditioning of one CFG branch.
#[derive(Clone, Copy, Debug)]
pub struct BranchInput<'a> {
    pub text: &'a TextEmbedding,
    /// `None` means audio absent: no injection at all.
    pub audio: Option<&'a PackedAudio>,
    /// Reference latent frame `[h, w, c]`.
    pub reference: &'a Tensor,
}

/// Anything that predicts the noise in `x` at diffusion time `t ∈ [0, 1]`.
pub trait Denoiser {
    fn predict_eps(&self, x: &Tensor, t: f64, branch: &BranchInput) -> Result<Tensor>;
}

/// Model input at step `k`: `add_noise(z0, k, eps)`, with the first
/// `prefix_len` frames replaced by the noise-free `√ᾱ_k·z0`, the same state
/// the sampler's clamping produces at inference.
pub fn noisy_input(z0: &Tensor, k: usize, eps: &Tensor, prefix_len: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let frames = z0.shape()[0];
    if prefix_len >= frames {
        return Err(Error::Config(format!(
            "prefix of {prefix_len} frames leaves nothing to denoise in {frames}"
        )));
    }
    let mut z_k = add_noise(z0, k, eps, sched)?;
    if prefix_len > 0 {
        let per = z0.numel() / frames;
        let clean = sched.alpha_bar(k)?.sqrt();
        let n = prefix_len * per;
        for (dst, src) in z_k.data_mut()[..n].iter_mut().zip(&z0.data()[..n]) {
            *dst = clean * src;
        }
    }
    Ok(z_k)
}

/// Mean squared error between `pred` (`[F·hw, c]`) and `eps` over frames
/// `prefix_len..F`.
pub fn masked_mse(g: &mut Graph, pred: Var, eps: &Tensor, prefix_len: usize) -> Result<Var> {
    let frames = eps.shape()[0];
    let c = *eps.shape().last().expect("rank >= 1");
    let rows = eps.numel() / c;
    let per = rows / frames;
    if g.value(pred).shape() != [rows, c] {
        return Err(Error::Dimension {
            op: "masked_mse",
            lhs: g.value(pred).shape().to_vec(),
            rhs: vec![rows, c],
        });
    }
    let tail = eps.reshape(&[rows, c])?.slice_outer(prefix_len * per, rows)?;
    let p = g.slice_rows(pred, prefix_len * per, rows)?;
    let target = g.constant(tail);
    let diff = g.sub(p, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// One draw of the denoising objective `‖ε_θ(z_k, k/K) − ε‖²` on the
/// non-prefix frames of `z0` (`[F, h, w, c]`).
///
/// `forward` receives the noisy input and the normalized time and returns
/// the prediction as a graph node of shape `[F·h·w, c]`.
pub fn training_loss<F>(
    g: &mut Graph,
    z0: &Tensor,
    prefix_len: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    forward: F,
) -> Result<Var>
where
    F: FnOnce(&mut Graph, &Tensor, f64) -> Result<Var>,
{
    let k = rng.below(sched.len());
    let eps = rng.normal_tensor(z0.shape());
    let z_k = noisy_input(z0, k, &eps, prefix_len, sched)?;
    let pred = forward(g, &z_k, sched.time(k))?;
    masked_mse(g, pred, &eps, prefix_len)
}
