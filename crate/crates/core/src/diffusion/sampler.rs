use std::io::Write;

use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use super::{BranchInput, Denoiser};
use crate::audio::PackedAudio;
use crate::dit::TextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Guidance scales for the text and audio directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfgParams {
    pub s_text: f64,
    pub s_audio: f64,
}

impl Default for CfgParams {
    fn default() -> Self {
        Self {
            s_text: 4.5,
            s_audio: 4.5,
        }
    }
}

impl CfgParams {
    pub fn validate(&self) -> Result<()> {
        if self.s_text >= 0.0 && self.s_audio >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("guidance scales must be >= 0, got {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Clip `ẑ0` to `[-b, b]` before each update.
    pub clip_x0: Option<f64>,
    /// Project `ẑ0` onto latents that decode to pixels in `[0, 1]`; applied
    /// by callers that know the codec, after `clip_x0`.
    pub pixel_range: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            clip_x0: None,
            pixel_range: false,
        }
    }
}

impl SamplerConfig {
    /// Evenly spaced schedule indices `(j+1)·K/S − 1`, descending; the last
    /// visited index is the smallest and the first is always `K − 1`.
    pub fn timesteps(&self, k_total: usize) -> Result<Vec<usize>> {
        if self.steps == 0 || self.steps > k_total {
            return Err(Error::Config(format!(
                "steps must be in [1, {k_total}], got {}",
                self.steps
            )));
        }
        Ok((0..self.steps)
            .rev()
            .map(|j| (j + 1) * k_total / self.steps - 1)
            .collect())
    }
}

/// `eps_uu + s_text·(eps_tu − eps_uu) + s_audio·(eps_ta − eps_tu)`.
pub fn cfg_combine(eps_uu: &Tensor, eps_tu: &Tensor, eps_ta: &Tensor, p: CfgParams) -> Result<Tensor> {
    for other in [eps_tu, eps_ta] {
        if other.shape() != eps_uu.shape() {
            return Err(Error::Dimension {
                op: "cfg_combine",
                lhs: eps_uu.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
    }
    let data = eps_uu
        .data()
        .iter()
        .zip(eps_tu.data())
        .zip(eps_ta.data())
        .map(|((&uu, &tu), &ta)| uu + p.s_text * (tu - uu) + p.s_audio * (ta - tu))
        .collect();
    Tensor::new(eps_uu.shape().to_vec(), data)
}

/// Conditions shared by every step of one sampling run.
#[derive(Clone, Debug)]
pub struct Conditions {
    pub text: TextEmbedding,
    pub null_text: TextEmbedding,
    /// `None` runs every branch audio-free.
    pub audio: Option<PackedAudio>,
    pub reference: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub mean_abs_eps: f64,
    pub mean_abs_z: f64,
}

fn mean_abs(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v.abs()).sum::<f64>() / t.numel() as f64
}

fn clamp_prefix(x: &mut Tensor, prefix: &Tensor, scale: f64) {
    let n = prefix.numel();
    for (dst, &src) in x.data_mut()[..n].iter_mut().zip(prefix.data()) {
        *dst = if scale == 1.0 { src } else { scale * src };
    }
}

/// Deterministic guided reverse process from `z_init` (`[F, h, w, c]`).
///
/// Each step evaluates the null, text-only and text+audio branches in that
/// order, combines them with [`cfg_combine`], and moves to the next index
/// along the `ẑ0` / `ε̂` pair. The leading `prefix.shape()[0]` frames are held
/// at `√ᾱ·prefix` throughout and equal `prefix` in the output.
#[allow(clippy::too_many_arguments)]
pub fn sample<D: Denoiser + ?Sized>(
    model: &D,
    z_init: &Tensor,
    conds: &Conditions,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    cfg: CfgParams,
    prefix: Option<&Tensor>,
    trace: Option<&mut dyn Write>,
) -> Result<Tensor> {
    sample_projected(model, z_init, conds, sched, sampler, cfg, prefix, trace, None)
}

/// In-place map over a flattened `ẑ0` estimate.
pub type X0Map<'a> = dyn Fn(&mut [f64]) + 'a;

/// [`sample`] with an extra in-place map applied to every `ẑ0` estimate.
#[allow(clippy::too_many_arguments)]
pub fn sample_projected<D: Denoiser + ?Sized>(
    model: &D,
    z_init: &Tensor,
    conds: &Conditions,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    cfg: CfgParams,
    prefix: Option<&Tensor>,
    mut trace: Option<&mut dyn Write>,
    project: Option<&X0Map>,
) -> Result<Tensor> {
    cfg.validate()?;
    let frames = z_init.shape()[0];
    if let Some(p) = prefix {
        let f = p.shape()[0];
        if f >= frames || p.shape()[1..] != z_init.shape()[1..] {
            return Err(Error::Shape(format!(
                "prefix {:?} must be shorter than and match {:?}",
                p.shape(),
                z_init.shape()
            )));
        }
    }
    let steps = sampler.timesteps(sched.len())?;
    let uu = BranchInput {
        text: &conds.null_text,
        audio: None,
        reference: &conds.reference,
    };
    let tu = BranchInput {
        text: &conds.text,
        audio: None,
        reference: &conds.reference,
    };
    let ta = BranchInput {
        text: &conds.text,
        audio: conds.audio.as_ref(),
        reference: &conds.reference,
    };

    let mut x = z_init.clone();
    if let Some(p) = prefix {
        clamp_prefix(&mut x, p, sched.alpha_bar(steps[0])?.sqrt());
    }
    for (i, &k) in steps.iter().enumerate() {
        let t = sched.time(k);
        let eps_uu = model.predict_eps(&x, t, &uu)?;
        let eps_tu = model.predict_eps(&x, t, &tu)?;
        let eps_ta = match ta.audio {
            Some(_) => model.predict_eps(&x, t, &ta)?,
            None => eps_tu.clone(),
        };
        let eps = cfg_combine(&eps_uu, &eps_tu, &eps_ta, cfg)?;
        if !eps.is_finite() {
            return Err(Error::Numeric(format!("non-finite noise estimate at step {i} (k={k})")));
        }

        let ab = sched.alpha_bar(k)?;
        let ab_prev = match steps.get(i + 1) {
            Some(&kp) => sched.alpha_bar(kp)?,
            None => 1.0,
        };
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        let mut z0: Vec<f64> = x
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&xv, &e)| (xv - sb * e) / sa)
            .collect();
        if let Some(b) = sampler.clip_x0 {
            z0.iter_mut().for_each(|v| *v = v.clamp(-b, b));
        }
        if let Some(f) = project {
            f(&mut z0);
        }
        let next: Vec<f64> = z0.iter().zip(eps.data()).map(|(&z, &e)| pa * z + pb * e).collect();
        x = Tensor::new(x.shape().to_vec(), next)?;
        if !x.is_finite() {
            return Err(Error::Numeric(format!("non-finite latent at step {i} (k={k})")));
        }
        if let Some(p) = prefix {
            clamp_prefix(&mut x, p, pa);
        }
        if let Some(w) = trace.as_deref_mut() {
            let rec = TraceRecord {
                k,
                mean_abs_eps: mean_abs(&eps),
                mean_abs_z: mean_abs(&x),
            };
            let line = serde_json::to_string(&rec).expect("plain record");
            writeln!(w, "{line}").map_err(|e| Error::io("sampler trace", e))?;
        }
    }
    Ok(x)
}
