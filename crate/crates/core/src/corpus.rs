//! Synthetic talking-face corpus with analytic lip sync.
//!
//! Each sample is a static face whose mouth rectangle brightens with the
//! audio envelope: mean mouth brightness is `0.1 + 0.8·e[t]`, and the audio
//! RMS of frame `t` is `e[t]·A` for a fixed `A`.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::wav::{quantize, read_wav, write_wav};
use crate::audio::{extract_features, group_features, Waveform};
use crate::codec::{decode, encode, CodecParams, LatentVideo, VideoTensor, TEMPORAL_FACTOR};
use crate::error::{Error, Result};
use crate::metrics::{sync_proxy, Roi};
use crate::numerics::io::{read_tensor, write_atomic, write_tensor, Dtype};
use crate::numerics::{Rng, Tensor};

pub const SAMPLE_RATE: u32 = 4096;
/// Frame RMS of a fully open mouth (`e = 1`).
pub const FULL_RMS: f64 = 0.3;
pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;
/// Envelope knots are placed every this many frames.
const KNOT_SPACING: usize = 4;

pub const TEMPLATES: [(&str, f64); 4] = [
    ("a round face speaking, plain background", 0.0),
    ("a round face speaking, dim background", 0.15),
    ("a round face speaking, grey background", 0.3),
    ("a round face speaking, bright background", 0.45),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// Force a zero envelope.
    pub silent: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            frames: 33,
            height: 16,
            width: 16,
            fps: 16.0,
            silent: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub waveform: Waveform,
    pub video: VideoTensor,
    pub prompt: String,
    pub identity_seed: u64,
    /// Per-frame amplitude in `[0, 1]`.
    pub envelope: Vec<f64>,
    pub mouth_roi: Roi,
    pub face_box: Roi,
}

pub fn mouth_roi(h: usize, w: usize) -> Roi {
    Roi {
        top: h * 5 / 8,
        bottom: h * 7 / 8,
        left: w / 4,
        right: w * 3 / 4,
    }
}

pub fn face_box(h: usize, w: usize) -> Roi {
    Roi {
        top: h / 8,
        bottom: h - h / 8,
        left: w / 8,
        right: w - w / 8,
    }
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Knots uniform in `[0, 1]` every few frames, smoothstep between them.
fn envelope(rng: &mut Rng, frames: usize) -> Vec<f64> {
    let knots: Vec<f64> = (0..frames.div_ceil(KNOT_SPACING) + 1).map(|_| rng.uniform()).collect();
    (0..frames)
        .map(|t| {
            let (k, r) = (t / KNOT_SPACING, t % KNOT_SPACING);
            let u = smoothstep(r as f64 / KNOT_SPACING as f64);
            knots[k] + (knots[k + 1] - knots[k]) * u
        })
        .collect()
}

pub fn synth_sample(seed: u64, opts: &SynthOptions) -> Result<SynthSample> {
    let SynthOptions {
        frames: t_len,
        height: h,
        width: w,
        fps,
        silent,
    } = *opts;
    if t_len % TEMPORAL_FACTOR != 1 || h % 2 != 0 || w % 2 != 0 || h < 8 || w < 8 {
        return Err(Error::Alignment(format!(
            "synthetic sample needs T=1 mod 4 and even H, W >= 8; got T={t_len}, {h}x{w}"
        )));
    }
    let per_frame = SAMPLE_RATE as f64 / fps;
    if per_frame.fract() != 0.0 {
        return Err(Error::Config(format!(
            "fps {fps} must divide the sample rate {SAMPLE_RATE}"
        )));
    }
    let mut rng = Rng::derive(seed, 0x5A3);
    let env = if silent {
        vec![0.0; t_len]
    } else {
        envelope(&mut rng, t_len)
    };

    // Carriers sit on whole cycles per frame, so the frame RMS is exactly
    // e[t]·sqrt(Σa²/2) = e[t]·FULL_RMS.
    let n_tones = 2 + rng.below(3);
    let max_cycles = (per_frame as usize / 2 - 1).min(14);
    let mut cycles: Vec<usize> = (1..=max_cycles).collect();
    rng.shuffle(&mut cycles);
    let raw: Vec<f64> = (0..n_tones).map(|_| rng.uniform_range(0.5, 1.0)).collect();
    let norm = (raw.iter().map(|a| a * a).sum::<f64>() / 2.0).sqrt();
    let tones: Vec<(f64, f64, f64)> = (0..n_tones)
        .map(|i| (raw[i] * FULL_RMS / norm, cycles[i] as f64 * fps, rng.uniform() * TAU))
        .collect();
    let n = (t_len as f64 * per_frame) as usize;
    let samples = (0..n)
        .map(|i| {
            let time = i as f64 / SAMPLE_RATE as f64;
            let e = env[(i as f64 / per_frame) as usize];
            e * tones
                .iter()
                .map(|(a, f, p)| a * (TAU * f * time + p).sin())
                .sum::<f64>()
        })
        .collect();
    let waveform = quantize(&Waveform::new(samples, SAMPLE_RATE)?);

    let (template, bg) = TEMPLATES[rng.below(TEMPLATES.len())];
    let skin = rng.uniform_range(0.55, 0.8);
    let (cy, cx) = (h as f64 / 2.0 - 0.5, w as f64 / 2.0 - 0.5);
    let radius = rng.uniform_range(0.36, 0.44) * h.min(w) as f64;
    let mouth = mouth_roi(h, w);
    let eye_row = h * 3 / 8;
    let eyes = [w * 5 / 16, w - w * 5 / 16 - 1];
    let mut still = vec![bg; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if d <= radius {
                still[y * w + x] = skin;
            }
            if (eye_row..eye_row + 2).contains(&y) && eyes.iter().any(|&e| (e..e + 2).contains(&x)) {
                still[y * w + x] = 0.05;
            }
        }
    }
    let mut data = Vec::with_capacity(t_len * h * w);
    for &e in &env {
        let lip = 0.1 + 0.8 * e;
        for y in 0..h {
            for x in 0..w {
                data.push(if mouth.contains(y, x) { lip } else { still[y * w + x] });
            }
        }
    }
    let video = VideoTensor::new(Tensor::new(vec![t_len, h, w, 1], data)?, fps)?;
    Ok(SynthSample {
        waveform,
        video,
        prompt: template.to_string(),
        identity_seed: seed,
        envelope: env,
        mouth_roi: mouth,
        face_box: face_box(h, w),
    })
}

/// Quality gate: keep a sample when its sync proxy reaches `min_sync`.
pub fn filter(sample: &SynthSample, min_sync: f64) -> bool {
    sync_proxy(&sample.video, &sample.waveform, &sample.mouth_roi, sample.video.fps).is_ok_and(|c| c.r >= min_sync)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: String,
    pub video: String,
    pub latent: String,
    /// Rearranged audio feature groups `[L, 64]`, the input of the pack layer.
    pub audio_groups: String,
    pub envelope: String,
    pub prompt: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub fps: f64,
    pub mouth_roi: Roi,
    pub face_box: Roi,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub synth: SynthOptions,
    pub codec_seed: u64,
    pub min_sync: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_test: 8,
            seed: 0,
            synth: SynthOptions::default(),
            codec_seed: 0,
            min_sync: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: CorpusConfig,
    pub entries: Vec<ManifestEntry>,
}

fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_tensor(path, &Tensor::new(vec![v.len()], v.to_vec())?, Dtype::F64)
}

/// Generates, filters and persists `n_train + n_test` samples.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let codec = CodecParams::new(1, cfg.codec_seed);
    let total = cfg.n_train + cfg.n_test;
    let mut order: Vec<usize> = (0..total).collect();
    Rng::derive(cfg.seed, 0x5917).shuffle(&mut order);

    let mut entries = Vec::with_capacity(total);
    let mut attempt = 0u64;
    for (i, &rank) in order.iter().enumerate() {
        let sample = loop {
            let s = synth_sample(crate::numerics::splitmix(cfg.seed ^ attempt), &cfg.synth)?;
            attempt += 1;
            if filter(&s, cfg.min_sync) {
                break s;
            }
            if attempt > 100 * total as u64 {
                return Err(Error::Config(format!(
                    "filter threshold {} rejects every sample",
                    cfg.min_sync
                )));
            }
        };
        let id = format!("s{i:04}");
        let file = |suffix: &str| format!("{id}.{suffix}");
        let entry = ManifestEntry {
            wav: file("wav"),
            video: file("video.oavt"),
            latent: file("latent.oavt"),
            audio_groups: file("audio.oavt"),
            envelope: file("envelope.oavt"),
            prompt: sample.prompt.clone(),
            frames: sample.video.len(),
            fps: sample.video.fps,
            mouth_roi: sample.mouth_roi,
            face_box: sample.face_box,
            split: if rank < cfg.n_train { Split::Train } else { Split::Test },
            id,
        };
        write_wav(&out_dir.join(&entry.wav), &sample.waveform)?;
        write_tensor(&out_dir.join(&entry.video), &sample.video.frames, Dtype::F64)?;
        write_tensor(
            &out_dir.join(&entry.latent),
            &encode(&sample.video, &codec)?.latents,
            Dtype::F64,
        )?;
        let feats = extract_features(&sample.waveform, sample.video.fps, sample.video.len())?;
        write_tensor(&out_dir.join(&entry.audio_groups), &group_features(&feats)?, Dtype::F64)?;
        write_vector(&out_dir.join(&entry.envelope), &sample.envelope)?;
        entries.push(entry);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(manifest)
}

/// One persisted sample, loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub entry: ManifestEntry,
    pub waveform: Waveform,
    pub latents: Tensor,
    pub audio_groups: Tensor,
    pub video: VideoTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub codec: CodecParams,
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    /// Reads the manifest and every file it references.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} unsupported",
                manifest.version
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut items = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            if !seen.insert(e.id.clone()) {
                return Err(Error::Format(format!("duplicate id {}", e.id)));
            }
            let video = VideoTensor::new(read_tensor(&root.join(&e.video))?, e.fps)?;
            items.push(CorpusItem {
                waveform: read_wav(&root.join(&e.wav))?,
                latents: read_tensor(&root.join(&e.latent))?,
                audio_groups: read_tensor(&root.join(&e.audio_groups))?,
                video,
                entry: e.clone(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            codec: CodecParams::new(1, manifest.config.codec_seed),
            manifest,
            items,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusItem> {
        self.items.iter().filter(move |i| i.entry.split == split)
    }

    /// Decodes an item's stored latents back to video.
    pub fn decode_item(&self, item: &CorpusItem) -> Result<VideoTensor> {
        decode(
            &LatentVideo {
                latents: item.latents.clone(),
                fps: item.entry.fps,
            },
            &self.codec,
        )
    }
}
