use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::DiTConfig;
use super::lora::LoraSet;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Named tensors. Ordered, so iteration (and thus serialization) is stable.
pub type ParamSet = BTreeMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Base,
    Lora,
    Audio,
    Codec,
}

pub const AUDIO_PREFIX: &str = "audio.";
pub const PACK_NAME: &str = "audio.pack";

pub fn proj_name(block: usize) -> String {
    format!("audio.proj.{block}")
}

pub fn role_of(name: &str) -> Role {
    if name.starts_with(AUDIO_PREFIX) {
        Role::Audio
    } else if name.starts_with("lora.") {
        Role::Lora
    } else if name.starts_with("codec.") {
        Role::Codec
    } else {
        Role::Base
    }
}

/// Base DiT weights plus the audio pipeline (pack and per-block projections).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: DiTConfig,
    pub params: ParamSet,
}

/// Matrix targets that may carry LoRA adapters: attention and FFN weights.
pub fn adaptable_targets(cfg: &DiTConfig) -> Vec<String> {
    let mut out = Vec::new();
    for b in 1..=cfg.n_blocks {
        for m in [
            "attn.q", "attn.k", "attn.v", "attn.o", "cross.q", "cross.k", "cross.v", "cross.o", "ffn.w1", "ffn.w2",
        ] {
            out.push(format!("blocks.{b}.{m}"));
        }
    }
    out
}

impl ModelWeights {
    /// Seeded initialization. Projections start at zero so a freshly attached
    /// audio pipeline leaves the base model's output unchanged.
    pub fn init(config: &DiTConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(config.init_seed, 0xD17);
        let (d, c, ff) = (config.d_model, config.latent_channels, config.d_ff);
        let mut p = ParamSet::new();
        let mut dense = |p: &mut ParamSet, name: String, rows: usize, cols: usize, gain: f64| {
            let std = gain / (rows as f64).sqrt();
            p.insert(name, rng.normal_tensor(&[rows, cols]).scale(std));
        };
        // Positional tables use std 0.1 regardless of their row count.
        let pos_gain = |rows: usize| 0.1 * (rows as f64).sqrt();
        let residual_gain = 1.0 / (2.0 * config.n_blocks as f64).sqrt();

        dense(&mut p, "embed.in.w".into(), 2 * c, d, 1.0);
        dense(
            &mut p,
            "embed.frame_pos".into(),
            config.max_frames,
            d,
            pos_gain(config.max_frames),
        );
        dense(
            &mut p,
            "embed.spatial_pos".into(),
            config.max_spatial,
            d,
            pos_gain(config.max_spatial),
        );
        dense(&mut p, "time.w1".into(), config.time_dim, d, 1.0);
        dense(&mut p, "time.w2".into(), d, d, 1.0);
        for b in 1..=config.n_blocks {
            for m in ["attn.q", "attn.k", "attn.v", "cross.q", "cross.k", "cross.v"] {
                dense(&mut p, format!("blocks.{b}.{m}"), d, d, 1.0);
            }
            for m in ["attn.o", "cross.o"] {
                dense(&mut p, format!("blocks.{b}.{m}"), d, d, residual_gain);
            }
            dense(&mut p, format!("blocks.{b}.ffn.w1"), d, ff, 1.0);
            dense(&mut p, format!("blocks.{b}.ffn.w2"), ff, d, residual_gain);
        }
        dense(&mut p, "final.out.w".into(), d, c, 0.5);
        dense(&mut p, PACK_NAME.into(), config.group_dim, config.pack_dim, 1.0);

        let zeros = |n: usize| Tensor::zeros(&[1, n]);
        let ones = |n: usize| Tensor::full(&[1, n], 1.0);
        p.insert("embed.in.b".into(), zeros(d));
        p.insert("time.b1".into(), zeros(d));
        p.insert("time.b2".into(), zeros(d));
        for b in 1..=config.n_blocks {
            for n in ["norm1", "norm2", "norm3"] {
                p.insert(format!("blocks.{b}.{n}.g"), ones(d));
                p.insert(format!("blocks.{b}.{n}.b"), zeros(d));
            }
            p.insert(format!("blocks.{b}.ffn.b1"), zeros(ff));
            p.insert(format!("blocks.{b}.ffn.b2"), zeros(d));
        }
        p.insert("final.norm.g".into(), ones(d));
        p.insert("final.norm.b".into(), zeros(d));
        p.insert("final.out.b".into(), zeros(c));
        for b in config.injection_layers() {
            p.insert(proj_name(b), Tensor::zeros(&[config.pack_dim, d]));
        }
        Ok(Self {
            config: config.clone(),
            params: p,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn audio_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys().filter(|k| role_of(k) == Role::Audio)
    }

    pub fn base_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys().filter(|k| role_of(k) == Role::Base)
    }

    pub fn randomize_audio(&mut self, seed: u64) {
        let mut rng = Rng::derive(seed, 0xA0D10);
        for (name, t) in self.params.iter_mut() {
            if role_of(name) == Role::Audio {
                let std = 1.0 / (t.shape()[0] as f64).sqrt();
                *t = rng.normal_tensor(t.shape()).scale(std);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    FrozenDit,
    Full,
    Lora,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen_dit" | "frozen" => Ok(TrainMode::FrozenDit),
            "full" => Ok(TrainMode::Full),
            "lora" => Ok(TrainMode::Lora),
            other => Err(Error::Config(format!(
                "unknown mode {other}; expected frozen_dit|full|lora"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::FrozenDit => "frozen_dit",
            TrainMode::Full => "full",
            TrainMode::Lora => "lora",
        })
    }
}

/// Names of the tensors a mode updates.
///
/// `frozen_dit`: the audio pipeline only; `full`: every base weight and the
/// audio pipeline; `lora`: adapter factors and the audio pipeline.
pub fn trainable_params(mode: TrainMode, weights: &ModelWeights, adapters: Option<&LoraSet>) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = weights.audio_names().cloned().collect();
    match mode {
        TrainMode::FrozenDit => {}
        TrainMode::Full => out.extend(weights.base_names().cloned()),
        TrainMode::Lora => {
            if let Some(a) = adapters {
                out.extend(a.param_names());
            }
        }
    }
    out
}
