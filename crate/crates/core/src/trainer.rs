//! Adam training loop over stored corpus latents.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecParams;
use crate::corpus::{Corpus, Split};
use crate::diffusion::{training_loss, NoiseSchedule};
use crate::dit::{
    adaptable_targets, forward_graph, merge_lora, trainable_params, AudioInput, Binder, Checkpoint, DiTConfig,
    ForwardInput, LoraSet, ModelWeights, TextEmbedding, TrainMode,
};
use crate::error::{Error, Result};
use crate::numerics::io::{decode_tensor_prefix, encode_tensor, write_atomic, Dtype};
use crate::numerics::{Graph, Rng, RngState, Tensor};

pub const STATE_FILE: &str = "train_state.bin";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
const STATE_MAGIC: &[u8; 4] = b"OATS";
const STATE_VERSION: u32 = 1;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub audio_dropout: f64,
    pub text_dropout: f64,
    /// Inclusive range of clean prefix frames per clip.
    pub prefix_min: usize,
    pub prefix_max: usize,
    /// Latent frames per training clip (the inference chunk length).
    pub clip_len: usize,
    pub seed: u64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub ema_decay: f64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    pub dit: DiTConfig,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Starting weights; fresh initialization when absent.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Lora,
            steps: 1000,
            batch_size: 1,
            lr: 1e-3,
            audio_dropout: 0.1,
            text_dropout: 0.1,
            prefix_min: 1,
            prefix_max: 4,
            clip_len: 9,
            seed: 0,
            lora_rank: 4,
            lora_alpha: 2.0,
            ema_decay: 0.98,
            checkpoint_every: 0,
            dit: DiTConfig::default(),
            corpus: None,
            out: None,
            init_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("audio_dropout", self.audio_dropout),
            ("text_dropout", self.text_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.prefix_min == 0 || self.prefix_min > self.prefix_max || self.prefix_max >= self.clip_len {
            return bad(format!(
                "prefix range [{}, {}] must satisfy 1 <= min <= max < clip_len {}",
                self.prefix_min, self.prefix_max, self.clip_len
            ));
        }
        if self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return bad("batch_size and lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1)", self.ema_decay));
        }
        self.dit.validate()
    }
}

/// First moment, second moment.
type Moments = (Tensor, Tensor);

#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub rng: Rng,
    pub ema_loss: Option<f64>,
    pub moments: BTreeMap<String, Moments>,
}

impl PartialEq for TrainState {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step
            && self.rng.state() == other.rng.state()
            && self.ema_loss.map(f64::to_bits) == other.ema_loss.map(f64::to_bits)
            && self.moments == other.moments
    }
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("truncated train state".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn take_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().expect("4 bytes")))
}

fn take_u64(buf: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, 8)?.try_into().expect("8 bytes")))
}

fn take_flag(buf: &mut &[u8]) -> Result<bool> {
    match take(buf, 1)?[0] {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(Error::Format(format!("bad flag byte {b}"))),
    }
}

impl TrainState {
    /// Little-endian binary: magic, version, step, EMA, RNG position, then
    /// named Adam moments as embedded tensors.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        out.push(self.ema_loss.is_some() as u8);
        out.extend_from_slice(&self.ema_loss.unwrap_or(0.0).to_le_bytes());
        let rs = self.rng.state();
        out.extend_from_slice(&rs.seed);
        out.extend_from_slice(&rs.word_pos.to_le_bytes());
        out.push(rs.cached_normal.is_some() as u8);
        out.extend_from_slice(&rs.cached_normal.unwrap_or(0).to_le_bytes());
        out.extend_from_slice(&(self.moments.len() as u32).to_le_bytes());
        for (name, (m, v)) in &self.moments {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend(encode_tensor(m, Dtype::F64));
            out.extend(encode_tensor(v, Dtype::F64));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut buf = bytes;
        if take(&mut buf, 4)? != STATE_MAGIC {
            return Err(Error::Format("not a train state file (bad magic)".into()));
        }
        let version = take_u32(&mut buf)?;
        if version != STATE_VERSION {
            return Err(Error::Format(format!("train state version {version} unsupported")));
        }
        let step = take_u64(&mut buf)? as usize;
        let has_ema = take_flag(&mut buf)?;
        let ema = f64::from_bits(take_u64(&mut buf)?);
        let seed: [u8; 32] = take(&mut buf, 32)?.try_into().expect("32 bytes");
        let word_pos = u128::from_le_bytes(take(&mut buf, 16)?.try_into().expect("16 bytes"));
        let has_cached = take_flag(&mut buf)?;
        let cached = take_u64(&mut buf)?;
        let n = take_u32(&mut buf)?;
        let mut moments = BTreeMap::new();
        for _ in 0..n {
            let len = take_u32(&mut buf)? as usize;
            let name = String::from_utf8(take(&mut buf, len)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let (m, _, used) = decode_tensor_prefix(buf)?;
            buf = &buf[used..];
            let (v, _, used) = decode_tensor_prefix(buf)?;
            buf = &buf[used..];
            moments.insert(name, (m, v));
        }
        if !buf.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in train state", buf.len())));
        }
        Ok(Self {
            step,
            rng: Rng::from_state(&RngState {
                seed,
                word_pos,
                cached_normal: has_cached.then_some(cached),
            }),
            ema_loss: has_ema.then_some(ema),
            moments,
        })
    }
}

/// One clip choice; drawn before any noise for the step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipDraw {
    pub item: usize,
    pub start: usize,
    pub prefix_len: usize,
    pub drop_audio: bool,
    pub drop_text: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub ema_loss: f64,
    pub draws: Vec<ClipDraw>,
    /// Largest absolute gradient entry per trainable tensor.
    pub grad_max_abs: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    step: usize,
    loss: f64,
    ema_loss: f64,
    mode: &'a str,
}

/// Sequence a clip is cut from: the reference slot followed by the
/// sample's latents, with matching audio groups (a zero row for the slot).
#[derive(Clone, Debug)]
struct ClipSource {
    latents: Tensor,
    groups: Tensor,
    reference: Tensor,
    text: TextEmbedding,
}

fn clip_source(latents: &Tensor, groups: &Tensor, prompt: &str, d_model: usize) -> Result<ClipSource> {
    let first = latents.slice_outer(0, 1)?;
    let gw = groups.shape()[1];
    Ok(ClipSource {
        latents: Tensor::concat_outer(&[&first, latents])?,
        groups: Tensor::concat_outer(&[&Tensor::zeros(&[1, gw]), groups])?,
        reference: first.reshape(&latents.shape()[1..])?,
        text: TextEmbedding::from_prompt(prompt, d_model),
    })
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub weights: ModelWeights,
    pub adapters: Option<LoraSet>,
    pub codec: CodecParams,
    pub trainable: BTreeSet<String>,
    pub state: TrainState,
    null_text: TextEmbedding,
    sources: Vec<ClipSource>,
    schedule: NoiseSchedule,
}

impl Trainer {
    /// Starts from `init` (adapters already in it are merged) or a fresh
    /// initialization of `cfg.dit`, training on the corpus train split.
    pub fn new(cfg: TrainConfig, corpus: &Corpus, init: Option<Checkpoint>) -> Result<Self> {
        cfg.validate()?;
        let weights = match init {
            Some(ck) => match &ck.adapters {
                Some(a) => merge_lora(&ck.weights, a)?,
                None => ck.weights,
            },
            None => ModelWeights::init(&cfg.dit)?,
        };
        let adapters = match cfg.mode {
            TrainMode::Lora => Some(LoraSet::init(
                &adaptable_targets(&weights.config),
                &weights,
                cfg.lora_rank,
                cfg.lora_alpha,
                cfg.seed,
            )?),
            _ => None,
        };
        let trainable = trainable_params(cfg.mode, &weights, adapters.as_ref());
        let moments = trainable
            .iter()
            .map(|n| {
                let shape = weights
                    .params
                    .get(n)
                    .or_else(|| adapters.as_ref().and_then(|a| a.param(n)))
                    .expect("trainable names resolve")
                    .shape()
                    .to_vec();
                (n.clone(), (Tensor::zeros(&shape), Tensor::zeros(&shape)))
            })
            .collect();
        let d = weights.config.d_model;
        let mut sources = Vec::new();
        for item in corpus.split(Split::Train) {
            let src = clip_source(&item.latents, &item.audio_groups, &item.entry.prompt, d)?;
            if src.latents.shape()[0] < cfg.clip_len {
                return Err(Error::Length {
                    required: cfg.clip_len,
                    available: src.latents.shape()[0],
                });
            }
            if src.latents.shape()[3] != weights.config.latent_channels {
                return Err(Error::Config(format!(
                    "corpus latents have {} channels, model expects {}",
                    src.latents.shape()[3],
                    weights.config.latent_channels
                )));
            }
            sources.push(src);
        }
        if sources.is_empty() {
            return Err(Error::Config("corpus has no training samples".into()));
        }
        Ok(Self {
            state: TrainState {
                step: 0,
                rng: Rng::derive(cfg.seed, 0x7EA1),
                ema_loss: None,
                moments,
            },
            null_text: TextEmbedding::null(d),
            codec: corpus.codec.clone(),
            cfg,
            weights,
            adapters,
            trainable,
            sources,
            schedule: NoiseSchedule::default(),
        })
    }

    /// Rebuilds a trainer from a directory written by [`Trainer::save`].
    pub fn resume(cfg: TrainConfig, corpus: &Corpus, dir: &Path) -> Result<Self> {
        let path = dir.join(STATE_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let state = TrainState::decode(&bytes)?;
        let ck = Checkpoint::load(dir)?;
        let mut t = Self::new(
            cfg,
            corpus,
            Some(Checkpoint {
                adapters: None,
                ..ck.clone()
            }),
        )?;
        if t.adapters.is_some() != ck.adapters.is_some() {
            return Err(Error::Config(
                "checkpoint adapters do not match the training mode".into(),
            ));
        }
        t.adapters = ck.adapters;
        if state.moments.keys().ne(t.trainable.iter()) {
            return Err(Error::Format(
                "train state moments do not match the trainable set".into(),
            ));
        }
        t.state = state;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            weights: self.weights.clone(),
            adapters: self.adapters.clone(),
            codec: Some(self.codec.clone()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.checkpoint().save(dir)?;
        let cfg = serde_json::to_string_pretty(&self.cfg).map_err(|e| Error::json(dir, e))? + "\n";
        write_atomic(&dir.join(TRAIN_CONFIG_FILE), cfg.as_bytes())?;
        write_atomic(&dir.join(STATE_FILE), &self.state.encode())
    }

    fn draw(&self, rng: &mut Rng) -> ClipDraw {
        let item = rng.below(self.sources.len());
        let span = self.sources[item].latents.shape()[0] - self.cfg.clip_len + 1;
        ClipDraw {
            item,
            start: rng.below(span),
            prefix_len: self.cfg.prefix_min + rng.below(self.cfg.prefix_max - self.cfg.prefix_min + 1),
            drop_audio: rng.bernoulli(self.cfg.audio_dropout),
            drop_text: rng.bernoulli(self.cfg.text_dropout),
        }
    }

    /// Batch composition for `n` hypothetical steps from a fresh stream,
    /// without training; used to audit dropout frequencies.
    pub fn sample_draws(&self, n: usize, seed: u64) -> Vec<ClipDraw> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    pub fn step(&mut self) -> Result<StepStats> {
        let batch = self.cfg.batch_size;
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut loss_sum = 0.0;
        let mut draws = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut rng = std::mem::replace(&mut self.state.rng, Rng::new(0));
            let d = self.draw(&mut rng);
            let src = &self.sources[d.item];
            let end = d.start + self.cfg.clip_len;
            let z0 = src.latents.slice_outer(d.start, end)?;
            let groups = src.groups.slice_outer(d.start, end)?;
            let text = if d.drop_text { &self.null_text } else { &src.text };

            let mut g = Graph::new();
            let mut binder = Binder::new(&self.weights, self.adapters.as_ref(), Some(&self.trainable));
            let loss = training_loss(&mut g, &z0, d.prefix_len, &self.schedule, &mut rng, |g, z_k, t| {
                forward_graph(
                    g,
                    &mut binder,
                    &ForwardInput {
                        z_t: z_k,
                        t,
                        text,
                        audio: (!d.drop_audio).then_some(AudioInput::Groups(&groups)),
                        reference: &src.reference,
                    },
                )
            });
            self.state.rng = rng;
            let loss = loss?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {}", self.state.step)));
            }
            loss_sum += value;
            let mut back = g.backward(loss)?;
            for (name, grad) in binder.gradients(&mut back, &self.trainable) {
                match grads.get_mut(&name) {
                    Some(acc) => acc.axpy(1.0, &grad)?,
                    None => {
                        grads.insert(name, grad);
                    }
                }
            }
            draws.push(d);
        }

        self.state.step += 1;
        let t = self.state.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        let inv_batch = 1.0 / batch as f64;
        let mut grad_max_abs = BTreeMap::new();
        for (name, grad) in &grads {
            let (m, v) = self.state.moments.get_mut(name).expect("moment per trainable");
            let param = match self.weights.params.get_mut(name) {
                Some(p) => p,
                None => self
                    .adapters
                    .as_mut()
                    .and_then(|a| a.param_mut(name))
                    .expect("trainable names resolve"),
            };
            grad_max_abs.insert(name.clone(), grad.max_abs() * inv_batch);
            let (pd, md, vd) = (param.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = grad.data()[i] * inv_batch;
                md[i] = BETA1 * md[i] + (1.0 - BETA1) * gi;
                vd[i] = BETA2 * vd[i] + (1.0 - BETA2) * gi * gi;
                pd[i] -= self.cfg.lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + ADAM_EPS);
            }
        }

        let loss = loss_sum * inv_batch;
        let ema = match self.state.ema_loss {
            None => loss,
            Some(e) => self.cfg.ema_decay * e + (1.0 - self.cfg.ema_decay) * loss,
        };
        self.state.ema_loss = Some(ema);
        Ok(StepStats {
            step: self.state.step,
            loss,
            ema_loss: ema,
            draws,
            grad_max_abs,
        })
    }

    /// Runs until `cfg.steps`, logging each step as a JSON line and writing
    /// checkpoints to `out` at the configured interval and at the end.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>, out: Option<&Path>) -> Result<Vec<StepStats>> {
        let mut history = Vec::new();
        let mode = self.cfg.mode.to_string();
        while self.state.step < self.cfg.steps {
            let mut stats = self.step()?;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&LogLine {
                    step: stats.step,
                    loss: stats.loss,
                    ema_loss: stats.ema_loss,
                    mode: &mode,
                })
                .expect("plain record");
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            if let Some(dir) = out {
                let every = self.cfg.checkpoint_every;
                if (every > 0 && stats.step % every == 0) || stats.step == self.cfg.steps {
                    self.save(dir)?;
                }
            }
            stats.grad_max_abs.clear();
            history.push(stats);
        }
        Ok(history)
    }
}
