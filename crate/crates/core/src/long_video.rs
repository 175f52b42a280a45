//! Chunked long-video inference with overlapping prefix latents.

use serde::{Deserialize, Serialize};

use crate::audio::{extract_features, pack, PackedAudio, Waveform};
use crate::codec::{
    decode, encode, project_pixel_range, video_len, CodecParams, LatentVideo, VideoTensor, TEMPORAL_FACTOR,
};
use crate::diffusion::{sample_projected, CfgParams, Conditions, Denoiser, NoiseSchedule, SamplerConfig};
use crate::dit::TextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const DEFAULT_CHUNK: usize = 9;
pub const DEFAULT_OVERLAP: usize = 4;
const NOISE_TAG: u64 = 0x7015E;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// First padded-latent index processed by this chunk (`n` after the overlap step).
    pub audio_start: usize,
    pub prefix_len: usize,
    pub write_start: usize,
    pub write_end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub n_loops: usize,
    pub l_pad: usize,
    /// `l + 1 + l_pad`, counting the reference slot.
    pub total: usize,
    pub s: usize,
    pub f: usize,
    pub chunks: Vec<Chunk>,
}

fn check_sizes(l: usize, s: usize, f: usize) -> Result<()> {
    if f == 0 || f >= s {
        return Err(Error::Config(format!("overlap f={f} must satisfy 1 <= f < s={s}")));
    }
    if l == 0 {
        return Err(Error::Config("audio latent length must be at least 1".into()));
    }
    Ok(())
}

/// Minimal `N` with `s + (N−1)(s−f) ≥ l + 1`, and the tail padding that makes
/// the coverage exact.
pub fn find_loop_n(l: usize, s: usize, f: usize) -> Result<(usize, usize)> {
    check_sizes(l, s, f)?;
    let needed = l + 1;
    let n = if needed <= s {
        1
    } else {
        1 + (needed - s).div_ceil(s - f)
    };
    let covered = s + (n - 1) * (s - f);
    Ok((n, covered - needed))
}

pub fn plan(l: usize, s: usize, f: usize) -> Result<ChunkPlan> {
    let (n_loops, l_pad) = find_loop_n(l, s, f)?;
    let chunks = (0..n_loops)
        .map(|i| {
            let start = i * (s - f);
            Chunk {
                audio_start: start,
                prefix_len: if i == 0 { 0 } else { f },
                write_start: start,
                write_end: start + s,
            }
        })
        .collect();
    Ok(ChunkPlan {
        n_loops,
        l_pad,
        total: l + 1 + l_pad,
        s,
        f,
        chunks,
    })
}

impl ChunkPlan {
    /// Audio latent length `l` this plan was built for.
    pub fn audio_len(&self) -> usize {
        self.total - 1 - self.l_pad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("invalid chunk plan: {m}")));
        let Some(first) = self.chunks.first() else {
            return bad("no chunks".into());
        };
        if first.write_start != 0 || first.prefix_len != 0 {
            return bad("chunk 0 must start at 0 with no prefix".into());
        }
        for (i, pair) in self.chunks.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            if b.prefix_len != self.f || a.write_end - b.write_start != self.f {
                return bad(format!("chunks {i} and {} do not overlap by f={}", i + 1, self.f));
            }
        }
        if self
            .chunks
            .iter()
            .any(|c| c.write_end - c.write_start != self.s || c.audio_start != c.write_start)
        {
            return bad("every chunk spans s frames of its own audio".into());
        }
        if self.chunks.last().map(|c| c.write_end) != Some(self.total) {
            return bad(format!("last chunk must end at total={}", self.total));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationRequest {
    pub prompt: String,
    /// Video frames to produce; `None` uses the longest `4l−3` the waveform covers.
    pub frames: Option<usize>,
    pub fps: f64,
    pub s: usize,
    pub f: usize,
    pub seed: u64,
    pub cfg: CfgParams,
    pub sampler: SamplerConfig,
    /// Generate without audio conditioning (the null-audio baseline).
    pub drop_audio: bool,
}

impl Default for GenerationRequest {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            frames: None,
            fps: 16.0,
            s: DEFAULT_CHUNK,
            f: DEFAULT_OVERLAP,
            seed: 0,
            cfg: CfgParams::default(),
            sampler: SamplerConfig::default(),
            drop_audio: false,
        }
    }
}

/// Packing weights and text width of the model behind a [`Denoiser`].
#[derive(Clone, Copy, Debug)]
pub struct Generator<'a, D: Denoiser + ?Sized> {
    pub model: &'a D,
    pub w_pack: &'a Tensor,
    pub text_dim: usize,
    pub codec: &'a CodecParams,
    pub schedule: &'a NoiseSchedule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongVideo {
    pub video: VideoTensor,
    pub plan: ChunkPlan,
    /// Stitched latents, `[total, h, w, c]`, reference slot and padding included.
    pub latents: Tensor,
    /// Raw sampler output of each chunk, `[s, h, w, c]`.
    pub chunk_outputs: Vec<Tensor>,
    pub reference_latent: Tensor,
}

/// Number of video frames a waveform covers, rounded down to `4l−3`.
pub fn frames_for(w: &Waveform, fps: f64) -> Result<usize> {
    let available = (w.len() as f64 * fps / w.sample_rate as f64).floor() as usize;
    if available == 0 {
        return Err(Error::Length {
            required: w.required_samples(1, fps),
            available: w.len(),
        });
    }
    Ok((available - 1) / TEMPORAL_FACTOR * TEMPORAL_FACTOR + 1)
}

/// Pads the packed audio, seeds one noise tensor for the whole
/// padded length, denoises chunk by chunk with overlapping prefixes, then
/// drops the reference slot and the tail padding before decoding.
pub fn generate_long<D: Denoiser + ?Sized>(
    gen: &Generator<D>,
    waveform: &Waveform,
    reference: &Tensor,
    req: &GenerationRequest,
) -> Result<LongVideo> {
    let frames = match req.frames {
        Some(t) => t,
        None => frames_for(waveform, req.fps)?,
    };
    if frames % TEMPORAL_FACTOR != 1 {
        return Err(Error::Alignment(format!("T={frames} is not 1 mod 4")));
    }
    let feats = extract_features(waveform, req.fps, frames)?;
    let z_a = pack(&feats, gen.w_pack)?;
    let l = z_a.len();
    let plan = plan(l, req.s, req.f)?;

    let rs = reference.shape();
    let ref_video = VideoTensor::new(reference.reshape(&[1, rs[0], rs[1], rs[2]])?, req.fps)?;
    let z_ref = encode(&ref_video, gen.codec)?.latents;
    let frame_shape = z_ref.shape()[1..].to_vec();
    let per = z_ref.numel();

    let d_pack = z_a.z_a.shape()[1];
    let mut rows = vec![0.0; d_pack];
    rows.extend_from_slice(z_a.z_a.data());
    rows.resize(plan.total * d_pack, 0.0);
    let padded = PackedAudio {
        z_a: Tensor::new(vec![plan.total, d_pack], rows)?,
    };

    let mut shape = vec![plan.total];
    shape.extend(&frame_shape);
    let mut latents = Rng::derive(req.seed, NOISE_TAG).normal_tensor(&shape);
    latents.data_mut()[..per].copy_from_slice(z_ref.data());

    let text = TextEmbedding::from_prompt(&req.prompt, gen.text_dim);
    let null_text = TextEmbedding::null(gen.text_dim);
    let reference_latent = z_ref.reshape(&frame_shape)?;
    let mut chunk_outputs: Vec<Tensor> = Vec::with_capacity(plan.chunks.len());
    for (i, c) in plan.chunks.iter().enumerate() {
        let z_init = latents.slice_outer(c.write_start, c.write_end)?;
        let prefix = match chunk_outputs.last() {
            None => z_ref.clone(),
            Some(prev) => prev.slice_outer(req.s - c.prefix_len, req.s)?,
        };
        let conds = Conditions {
            text: text.clone(),
            null_text: null_text.clone(),
            audio: if req.drop_audio {
                None
            } else {
                Some(padded.window(c.audio_start, c.audio_start + req.s)?)
            },
            reference: reference_latent.clone(),
        };
        let project = |z: &mut [f64]| {
            project_pixel_range(z, gen.codec).expect("latent width matches codec");
        };
        let out = sample_projected(
            gen.model,
            &z_init,
            &conds,
            gen.schedule,
            &req.sampler,
            req.cfg,
            Some(&prefix),
            None,
            req.sampler.pixel_range.then_some(&project as &dyn Fn(&mut [f64])),
        )
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("chunk {i}: {m}")),
            other => other,
        })?;
        latents.data_mut()[c.write_start * per..c.write_end * per].copy_from_slice(out.data());
        chunk_outputs.push(out);
    }

    let kept = latents.slice_outer(1, plan.total - plan.l_pad)?;
    let video = decode(
        &LatentVideo {
            latents: kept,
            fps: req.fps,
        },
        gen.codec,
    )?;
    debug_assert_eq!(video.len(), video_len(l));
    Ok(LongVideo {
        video,
        plan,
        latents,
        chunk_outputs,
        reference_latent,
    })
}
