//! Held-out generation and scoring.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusItem, Split};
use crate::diffusion::{CfgParams, NoiseSchedule, SamplerConfig};
use crate::dit::{Checkpoint, DitModel, PACK_NAME};
use crate::error::{Error, Result};
use crate::long_video::{generate_long, GenerationRequest, Generator, LongVideo, DEFAULT_CHUNK, DEFAULT_OVERLAP};
use crate::metrics::{continuity_check, identity_drift, sync_proxy, Mask, MetricReport, ReportRow};
use crate::numerics::{splitmix, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub seed: u64,
    pub cfg: CfgParams,
    pub sampler: SamplerConfig,
    pub s: usize,
    pub f: usize,
    /// Also generate each sample with audio dropped and report its sync.
    pub null_audio_baseline: bool,
    /// Evaluate only the first `limit` test samples.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            corpus: None,
            seed: 0,
            cfg: CfgParams::default(),
            sampler: SamplerConfig::default(),
            s: DEFAULT_CHUNK,
            f: DEFAULT_OVERLAP,
            null_audio_baseline: true,
            limit: None,
        }
    }
}

/// First frame of a sample's video, `[H, W, C]`.
pub fn reference_frame(item: &CorpusItem) -> Result<Tensor> {
    let v = &item.video;
    v.frames
        .slice_outer(0, 1)?
        .into_reshape(&[v.height(), v.width(), v.channels()])
}

/// Generates one corpus item from its own audio, prompt and first frame.
pub fn generate_item(ck: &Checkpoint, item: &CorpusItem, req: &GenerationRequest) -> Result<LongVideo> {
    let codec = ck
        .codec
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint carries no codec".into()))?;
    let model = DitModel::new(ck.weights.clone(), ck.adapters.clone());
    let schedule = NoiseSchedule::default();
    let gen = Generator {
        model: &model,
        w_pack: ck.weights.get(PACK_NAME)?,
        text_dim: ck.weights.config.d_model,
        codec,
        schedule: &schedule,
    };
    let mut req = req.clone();
    req.prompt = item.entry.prompt.clone();
    req.fps = item.entry.fps;
    req.frames = Some(item.entry.frames);
    generate_long(&gen, &item.waveform, &reference_frame(item)?, &req)
}

fn score(item: &CorpusItem, out: &LongVideo) -> Result<(f64, bool, f64, f64)> {
    let e = &item.entry;
    let sync = sync_proxy(&out.video, &item.waveform, &e.mouth_roi, e.fps)?;
    let mask = Mask::face_without_mouth(out.video.height(), out.video.width(), &e.face_box, &e.mouth_roi)?;
    let drift = identity_drift(&out.video, &mask)?;
    let cont = continuity_check(&out.latents, &out.plan, &out.chunk_outputs)?;
    Ok((sync.r, sync.constant, drift, cont))
}

/// Scores a checkpoint on the corpus test split.
pub fn evaluate(ck: &Checkpoint, corpus: &Corpus, cfg: &EvalConfig) -> Result<MetricReport> {
    let items: Vec<&CorpusItem> = corpus
        .split(Split::Test)
        .take(cfg.limit.unwrap_or(usize::MAX))
        .collect();
    if items.is_empty() {
        return Err(Error::Config("corpus has no test samples".into()));
    }
    let mut rows = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let req = GenerationRequest {
            s: cfg.s,
            f: cfg.f,
            seed: splitmix(cfg.seed ^ i as u64),
            cfg: cfg.cfg,
            sampler: cfg.sampler.clone(),
            ..GenerationRequest::default()
        };
        let out = generate_item(ck, item, &req)?;
        let (sync_r, sync_constant, identity_drift, continuity_max) = score(item, &out)?;
        let sync_r_null_audio = if cfg.null_audio_baseline {
            let dropped = GenerationRequest {
                drop_audio: true,
                ..req
            };
            Some(score(item, &generate_item(ck, item, &dropped)?)?.0)
        } else {
            None
        };
        rows.push(ReportRow {
            id: item.entry.id.clone(),
            sync_r,
            sync_constant,
            identity_drift,
            continuity_max,
            sync_r_null_audio,
        });
    }
    let echo = serde_json::to_value(cfg).expect("plain config");
    Ok(MetricReport::new(rows, echo))
}
