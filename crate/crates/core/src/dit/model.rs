use std::collections::{BTreeMap, BTreeSet};

use super::lora::{lora_param_name, LoraSet};
use super::params::{proj_name, ModelWeights, PACK_NAME};
use super::text::TextEmbedding;
use crate::audio::PackedAudio;
use crate::diffusion::{BranchInput, Denoiser};
use crate::error::{Error, Result};
use crate::numerics::{AttentionMask, Gradients, Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;
/// Multiplier applied to `t ∈ [0, 1]` before the sinusoidal encoding.
const TIME_SCALE: f64 = 1000.0;

/// Audio conditioning entering the forward pass.
#[derive(Clone, Copy, Debug)]
pub enum AudioInput<'a> {
    /// Already packed `z_a: [F, d_pack]`.
    Packed(&'a PackedAudio),
    /// Rearranged feature groups `[F, 4·d_a]`; packed inside the graph so
    /// the pack weights receive gradients.
    Groups(&'a Tensor),
}

impl AudioInput<'_> {
    fn len(&self) -> usize {
        match self {
            AudioInput::Packed(p) => p.len(),
            AudioInput::Groups(g) => g.shape()[0],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardInput<'a> {
    /// Noisy latent frames `[F, h, w, c]`.
    pub z_t: &'a Tensor,
    /// Diffusion time in `[0, 1]`.
    pub t: f64,
    pub text: &'a TextEmbedding,
    pub audio: Option<AudioInput<'a>>,
    /// Reference latent frame `[h, w, c]` (or `[1, h, w, c]`).
    pub reference: &'a Tensor,
}

/// Resolves parameter names to graph leaves, creating each leaf once.
///
/// Names in `trainable` become gradient-carrying leaves; everything else is
/// a constant. Adapted matrices are bound as `W + (alpha/r)·A·B`.
pub struct Binder<'a> {
    weights: &'a ModelWeights,
    adapters: Option<&'a LoraSet>,
    trainable: Option<&'a BTreeSet<String>>,
    vars: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(
        weights: &'a ModelWeights,
        adapters: Option<&'a LoraSet>,
        trainable: Option<&'a BTreeSet<String>>,
    ) -> Self {
        Self {
            weights,
            adapters,
            trainable,
            vars: BTreeMap::new(),
        }
    }

    /// Use an existing node for `name` instead of creating a leaf.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    fn leaf(&mut self, g: &mut Graph, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let rg = self.trainable.is_some_and(|t| t.contains(name));
        let v = g.leaf(value.clone(), rg);
        self.vars.insert(name.to_string(), v);
        v
    }

    /// A raw parameter (no adapter applied).
    pub fn param(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        let w = self.weights;
        let t = w.get(name)?;
        Ok(self.leaf(g, name, t))
    }

    /// Effective matrix: base weight plus its LoRA update, if adapted.
    pub fn weight(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        let base = self.param(g, name)?;
        let Some(ad) = self.adapters.and_then(|a| a.get(name)) else {
            return Ok(base);
        };
        let a = self.leaf(g, &lora_param_name(name, 'a'), &ad.a);
        let b = self.leaf(g, &lora_param_name(name, 'b'), &ad.b);
        let ab = g.matmul(a, b)?;
        let delta = g.scale(ab, ad.scaling());
        g.add(base, delta)
    }

    /// Gradient of every bound trainable tensor; unused ones get zeros.
    pub fn gradients(&self, grads: &mut Gradients, names: &BTreeSet<String>) -> BTreeMap<String, Tensor> {
        names
            .iter()
            .map(|n| {
                let shape = self
                    .weights
                    .params
                    .get(n)
                    .or_else(|| self.adapters.and_then(|a| a.param(n)))
                    .map(|t| t.shape().to_vec())
                    .unwrap_or_else(|| vec![1]);
                let grad = self
                    .vars
                    .get(n)
                    .and_then(|v| grads.take(*v))
                    .unwrap_or_else(|| Tensor::zeros(&shape));
                (n.clone(), grad)
            })
            .collect()
    }
}

pub fn timestep_features(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t * TIME_SCALE * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Tensor::new(vec![1, dim], out).expect("dim entries")
}

fn linear(g: &mut Graph, b: &mut Binder, x: Var, w: &str, bias: Option<&str>) -> Result<Var> {
    let wv = b.weight(g, w)?;
    let y = g.matmul(x, wv)?;
    match bias {
        Some(name) => {
            let bv = b.param(g, name)?;
            g.add_row(y, bv)
        }
        None => Ok(y),
    }
}

fn norm(g: &mut Graph, b: &mut Binder, x: Var, prefix: &str) -> Result<Var> {
    let n = g.layernorm(x, LN_EPS);
    let gain = b.param(g, &format!("{prefix}.g"))?;
    let shift = b.param(g, &format!("{prefix}.b"))?;
    let y = g.mul_row(n, gain)?;
    g.add_row(y, shift)
}

/// Timestep embedding: sinusoid → linear → SiLU → linear, `[1, d_model]`.
pub fn timestep_embed(g: &mut Graph, b: &mut Binder, t: f64) -> Result<Var> {
    let cfg = &b.weights.config;
    let feats = g.constant(timestep_features(t, cfg.time_dim));
    let h = linear(g, b, feats, "time.w1", Some("time.b1"))?;
    let h = g.silu(h);
    linear(g, b, h, "time.w2", Some("time.b2"))
}

/// One DiT block: self-attention, text cross-attention, FFN (each pre-norm,
/// residual), then the audio addend when this block is an injection layer.
pub fn block(
    g: &mut Graph,
    b: &mut Binder,
    index: usize,
    x: Var,
    text: Var,
    audio: Option<Var>,
    tokens_per_frame: usize,
) -> Result<Var> {
    let cfg = b.weights.config.clone();
    let p = |s: &str| format!("blocks.{index}.{s}");
    let mask = if cfg.frame_local_attention {
        AttentionMask::Grouped {
            tokens_per_group: tokens_per_frame,
        }
    } else {
        AttentionMask::Full
    };

    let h = norm(g, b, x, &p("norm1"))?;
    let q = linear(g, b, h, &p("attn.q"), None)?;
    let k = linear(g, b, h, &p("attn.k"), None)?;
    let v = linear(g, b, h, &p("attn.v"), None)?;
    let a = g.attention(q, k, v, cfg.n_heads, mask)?;
    let a = linear(g, b, a, &p("attn.o"), None)?;
    let x = g.add(x, a)?;

    let h = norm(g, b, x, &p("norm2"))?;
    let q = linear(g, b, h, &p("cross.q"), None)?;
    let k = linear(g, b, text, &p("cross.k"), None)?;
    let v = linear(g, b, text, &p("cross.v"), None)?;
    let a = g.attention(q, k, v, cfg.n_heads, AttentionMask::Full)?;
    let a = linear(g, b, a, &p("cross.o"), None)?;
    let x = g.add(x, a)?;

    let h = norm(g, b, x, &p("norm3"))?;
    let h = linear(g, b, h, &p("ffn.w1"), Some(&p("ffn.b1")))?;
    let h = g.silu(h);
    let h = linear(g, b, h, &p("ffn.w2"), Some(&p("ffn.b2")))?;
    let mut x = g.add(x, h)?;

    if let Some(z_a) = audio {
        if cfg.is_injection_layer(index) {
            let proj = b.param(g, &proj_name(index))?;
            let per_frame = g.matmul(z_a, proj)?;
            let addend = g.repeat_rows(per_frame, tokens_per_frame);
            x = g.add(x, addend)?;
        }
    }
    Ok(x)
}

/// Predicted noise for `input.z_t` as a graph node of shape `[F·h·w, c]`.
pub fn forward_graph(g: &mut Graph, b: &mut Binder, input: &ForwardInput) -> Result<Var> {
    let cfg = b.weights.config.clone();
    let zs = input.z_t.shape();
    if zs.len() != 4 || zs[3] != cfg.latent_channels {
        return Err(Error::Shape(format!(
            "z_t must be [F,h,w,{}], got {zs:?}",
            cfg.latent_channels
        )));
    }
    let (frames, hw, c) = (zs[0], zs[1] * zs[2], zs[3]);
    if frames > cfg.max_frames || hw > cfg.max_spatial {
        return Err(Error::Config(format!(
            "{frames} frames of {hw} tokens exceed positional tables ({}, {})",
            cfg.max_frames, cfg.max_spatial
        )));
    }
    if input.reference.numel() != hw * c {
        return Err(Error::Shape(format!(
            "reference latent {:?} does not match one frame of {zs:?}",
            input.reference.shape()
        )));
    }
    if let Some(a) = &input.audio {
        if a.len() != frames {
            return Err(Error::Alignment(format!(
                "audio has {} latent frames, z_t has {frames}",
                a.len()
            )));
        }
    }

    let x = g.constant(input.z_t.reshape(&[frames * hw, c])?);
    let r = g.constant(input.reference.reshape(&[hw, c])?);
    let r = g.tile_rows(r, frames);
    let x = g.concat_cols(x, r)?;
    let x = linear(g, b, x, "embed.in.w", Some("embed.in.b"))?;

    let fp = b.param(g, "embed.frame_pos")?;
    let fp = g.slice_rows(fp, 0, frames)?;
    let fp = g.repeat_rows(fp, hw);
    let sp = b.param(g, "embed.spatial_pos")?;
    let sp = g.slice_rows(sp, 0, hw)?;
    let sp = g.tile_rows(sp, frames);
    let x = g.add(x, fp)?;
    let x = g.add(x, sp)?;

    let temb = timestep_embed(g, b, input.t)?;
    let mut x = g.add_row(x, temb)?;

    let text = g.constant(input.text.canonical());
    let audio = match input.audio {
        None => None,
        Some(AudioInput::Packed(p)) => Some(g.constant(p.z_a.clone())),
        Some(AudioInput::Groups(groups)) => {
            let gv = g.constant(groups.clone());
            let w = b.param(g, PACK_NAME)?;
            Some(g.matmul(gv, w)?)
        }
    };

    for i in 1..=cfg.n_blocks {
        x = block(g, b, i, x, text, audio, hw)?;
    }

    let x = norm(g, b, x, "final.norm")?;
    linear(g, b, x, "final.out.w", Some("final.out.b"))
}

/// Weights plus optional adapters: the inference-time model.
#[derive(Clone, Debug)]
pub struct DitModel {
    pub weights: ModelWeights,
    pub adapters: Option<LoraSet>,
}

impl DitModel {
    pub fn new(weights: ModelWeights, adapters: Option<LoraSet>) -> Self {
        Self { weights, adapters }
    }

    /// Value-only forward, returning `ε̂` with `z_t`'s shape.
    pub fn forward(&self, input: &ForwardInput) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.weights, self.adapters.as_ref(), None);
        let out = forward_graph(&mut g, &mut b, input)?;
        g.value(out).reshape(input.z_t.shape())
    }
}

impl Denoiser for DitModel {
    fn predict_eps(&self, x: &Tensor, t: f64, branch: &BranchInput) -> Result<Tensor> {
        self.forward(&ForwardInput {
            z_t: x,
            t,
            text: branch.text,
            audio: branch.audio.map(AudioInput::Packed),
            reference: branch.reference,
        })
    }
}
