use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use avatar_core::audio::wav::read_wav;
use avatar_core::codec::VideoTensor;
use avatar_core::corpus::{build_corpus, Corpus, CorpusConfig};
use avatar_core::diffusion::NoiseSchedule;
use avatar_core::dit::{gradient_suite, Checkpoint, DitModel, PACK_NAME};
use avatar_core::evaluate::{evaluate, reference_frame, EvalConfig};
use avatar_core::long_video::{generate_long, GenerationRequest, Generator, LongVideo};
use avatar_core::numerics::io::{read_tensor, write_atomic, write_tensor, Dtype};
use avatar_core::trainer::{TrainConfig, Trainer};

use crate::{inspect, pgm, Cli, Command, CorpusAction, Opts};

/// Gradient checks fail above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// Like `println!`, but a closed stdout (for example a pipe into `head`)
/// is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] avatar_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Check(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Paths inside a config file are relative to the file's directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Rejects flags the subcommand does not read.
fn only(opts: &Opts, command: &str, allowed: &[&str]) -> Result<()> {
    let given = [
        ("--config", opts.config.is_some()),
        ("--seed", opts.seed.is_some()),
        ("--out", opts.out.is_some()),
        ("--steps", opts.steps.is_some()),
        ("--mode", opts.mode.is_some()),
        ("--cfg-text", opts.cfg_text.is_some()),
        ("--cfg-audio", opts.cfg_audio.is_some()),
        ("--chunk-s", opts.chunk_s.is_some()),
        ("--overlap-f", opts.overlap_f.is_some()),
    ];
    for (flag, set) in given {
        if set && !allowed.contains(&flag) {
            return Err(CliError::Usage(format!("{flag} does not apply to '{command}'")));
        }
    }
    Ok(())
}

fn required<'a, T>(v: &'a Option<T>, flag: &str, command: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::Usage(format!("'{command}' requires {flag}")))
}

pub fn run(cli: &Cli) -> Result<()> {
    let o = &cli.opts;
    match &cli.command {
        Command::Corpus {
            action: CorpusAction::Gen,
        } => corpus_gen(o),
        Command::Train { resume } => train(o, *resume),
        Command::Generate => generate(o),
        Command::Eval => eval(o),
        Command::Gradcheck => gradcheck(o),
        Command::Inspect { path } => {
            only(o, "inspect", &[])?;
            let summary = inspect::summarize(path)?;
            say!("{}", serde_json::to_string_pretty(&summary).expect("plain summary"));
            Ok(())
        }
    }
}

fn corpus_gen(o: &Opts) -> Result<()> {
    only(o, "corpus gen", &["--config", "--seed", "--out"])?;
    let out = required(&o.out, "--out", "corpus gen")?;
    let mut cfg: CorpusConfig = match &o.config {
        Some(p) => read_json(p)?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    let manifest = build_corpus(&cfg, out)?;
    say!("wrote {} samples to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn train(o: &Opts, resume: bool) -> Result<()> {
    only(o, "train", &["--config", "--seed", "--out", "--steps", "--mode"])?;
    let path = required(&o.config, "--config", "train")?;
    let base = config_dir(path);
    let mut cfg: TrainConfig = read_json(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(n) = o.steps {
        cfg.steps = n;
    }
    if let Some(m) = &o.mode {
        cfg.mode = m.parse()?;
    }
    let out = match (&o.out, &cfg.out) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => resolve(&base, p),
        (None, None) => {
            return Err(CliError::Usage(
                "'train' requires --out or \"out\" in the config".into(),
            ))
        }
    };
    let corpus_dir = cfg
        .corpus
        .as_ref()
        .map(|p| resolve(&base, p))
        .ok_or_else(|| CliError::Usage("train config needs a \"corpus\" path".into()))?;
    let corpus = Corpus::load(&corpus_dir)?;
    let init = match &cfg.init_checkpoint {
        Some(p) => Some(Checkpoint::load(&resolve(&base, p))?),
        None => None,
    };
    create_dir(&out)?;
    let mut trainer = if resume {
        Trainer::resume(cfg, &corpus, &out)?
    } else {
        Trainer::new(cfg, &corpus, init)?
    };
    let log_path = out.join(TRAIN_LOG_FILE);
    let file = if resume {
        File::options().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(io_err(&log_path))?;
    let mut log = BufWriter::new(file);
    let history = trainer.run(Some(&mut log), Some(&out))?;
    log.flush().map_err(io_err(&log_path))?;
    if history.is_empty() {
        trainer.save(&out)?;
    }
    match history.last() {
        Some(s) => say!("step {} loss {:.6} ema {:.6}", s.step, s.loss, s.ema_loss),
        None => say!("nothing to do at step {}", trainer.state.step),
    }
    Ok(())
}

/// Where a generation takes its audio and first frame from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    /// A corpus sample by id; its prompt, fps and length fill unset request fields.
    Corpus { corpus: PathBuf, id: String },
    /// A 16-bit WAV and an OAVT reference, `[H, W, C]` or a video whose first frame is used.
    Files { wav: PathBuf, reference: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub checkpoint: PathBuf,
    pub source: Source,
    #[serde(default)]
    pub request: GenerationRequest,
}

fn apply_sampling_flags(o: &Opts, req: &mut GenerationRequest) {
    if let Some(s) = o.seed {
        req.seed = s;
    }
    if let Some(s) = o.steps {
        req.sampler.steps = s;
    }
    if let Some(s) = o.cfg_text {
        req.cfg.s_text = s;
    }
    if let Some(s) = o.cfg_audio {
        req.cfg.s_audio = s;
    }
    if let Some(s) = o.chunk_s {
        req.s = s;
    }
    if let Some(f) = o.overlap_f {
        req.f = f;
    }
}

const SAMPLING_FLAGS: [&str; 8] = [
    "--config",
    "--seed",
    "--out",
    "--steps",
    "--cfg-text",
    "--cfg-audio",
    "--chunk-s",
    "--overlap-f",
];

fn generate(o: &Opts) -> Result<()> {
    only(o, "generate", &SAMPLING_FLAGS)?;
    let path = required(&o.config, "--config", "generate")?;
    let out = required(&o.out, "--out", "generate")?;
    let base = config_dir(path);
    let cfg: GenerateConfig = read_json(path)?;
    let ck = Checkpoint::load(&resolve(&base, &cfg.checkpoint))?;
    let mut req = cfg.request.clone();
    apply_sampling_flags(o, &mut req);

    let (waveform, reference) = match &cfg.source {
        Source::Corpus { corpus, id } => {
            let corpus = Corpus::load(&resolve(&base, corpus))?;
            let item = corpus
                .items
                .iter()
                .find(|i| &i.entry.id == id)
                .ok_or_else(|| avatar_core::Error::Config(format!("corpus has no sample {id}")))?;
            if req.prompt.is_empty() {
                req.prompt = item.entry.prompt.clone();
            }
            if req.frames.is_none() {
                req.frames = Some(item.entry.frames);
            }
            req.fps = item.entry.fps;
            (item.waveform.clone(), reference_frame(item)?)
        }
        Source::Files { wav, reference } => {
            let w = read_wav(&resolve(&base, wav))?;
            let r = read_tensor(&resolve(&base, reference))?;
            let r = match r.shape().len() {
                3 => r,
                4 => {
                    let s = r.shape().to_vec();
                    r.slice_outer(0, 1)?.into_reshape(&s[1..])?
                }
                _ => {
                    return Err(avatar_core::Error::Shape(format!(
                        "reference must be [H,W,C] or [T,H,W,C], got {:?}",
                        r.shape()
                    ))
                    .into())
                }
            };
            (w, r)
        }
    };

    let codec = ck
        .codec
        .as_ref()
        .ok_or_else(|| avatar_core::Error::Config("checkpoint carries no codec".into()))?;
    let model = DitModel::new(ck.weights.clone(), ck.adapters.clone());
    let schedule = NoiseSchedule::default();
    let gen = Generator {
        model: &model,
        w_pack: ck.weights.get(PACK_NAME)?,
        text_dim: ck.weights.config.d_model,
        codec,
        schedule: &schedule,
    };
    let result = generate_long(&gen, &waveform, &reference, &req)?;
    write_generation(out, &req, &result)?;
    say!(
        "wrote {} frames in {} chunks to {}",
        result.video.len(),
        result.plan.chunks.len(),
        out.display()
    );
    Ok(())
}

fn write_generation(out: &Path, req: &GenerationRequest, g: &LongVideo) -> Result<()> {
    let frames_dir = out.join("frames");
    create_dir(&frames_dir)?;
    write_tensor(&out.join("video.oavt"), &g.video.frames, Dtype::F64)?;
    write_tensor(&out.join("latents.oavt"), &g.latents, Dtype::F64)?;
    write_json(&out.join("plan.json"), &g.plan)?;
    write_json(&out.join("request.json"), req)?;
    write_frames(&frames_dir, &g.video)
}

fn write_frames(dir: &Path, v: &VideoTensor) -> Result<()> {
    for t in 0..v.len() {
        let bytes = pgm::encode(v.frame(t), v.height(), v.width(), v.channels());
        write_atomic(&dir.join(format!("frame_{t:04}.pgm")), &bytes)?;
    }
    Ok(())
}

fn eval(o: &Opts) -> Result<()> {
    only(o, "eval", &SAMPLING_FLAGS)?;
    let path = required(&o.config, "--config", "eval")?;
    let out = required(&o.out, "--out", "eval")?;
    let base = config_dir(path);
    let mut cfg: EvalConfig = read_json(path)?;
    let mut req = GenerationRequest {
        seed: cfg.seed,
        cfg: cfg.cfg,
        sampler: cfg.sampler.clone(),
        s: cfg.s,
        f: cfg.f,
        ..GenerationRequest::default()
    };
    apply_sampling_flags(o, &mut req);
    cfg.seed = req.seed;
    cfg.cfg = req.cfg;
    cfg.sampler = req.sampler;
    cfg.s = req.s;
    cfg.f = req.f;
    let ck_path = resolve(
        &base,
        required(&cfg.checkpoint, "\"checkpoint\" in the config", "eval")?,
    );
    let corpus_path = resolve(&base, required(&cfg.corpus, "\"corpus\" in the config", "eval")?);
    let ck = Checkpoint::load(&ck_path)?;
    let corpus = Corpus::load(&corpus_path)?;
    let report = evaluate(&ck, &corpus, &cfg)?;
    create_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let a = &report.aggregate;
    match a.mean_sync_r_null_audio {
        Some(null) => say!(
            "{} samples: sync_r {:.4} (null audio {:.4}), identity_drift {:.4}, continuity {:.3e}",
            report.rows.len(),
            a.mean_sync_r,
            null,
            a.mean_identity_drift,
            a.mean_continuity_max
        ),
        None => say!(
            "{} samples: sync_r {:.4}, identity_drift {:.4}, continuity {:.3e}",
            report.rows.len(),
            a.mean_sync_r,
            a.mean_identity_drift,
            a.mean_continuity_max
        ),
    }
    Ok(())
}

fn gradcheck(o: &Opts) -> Result<()> {
    only(o, "gradcheck", &["--seed", "--out"])?;
    let reports = gradient_suite(o.seed.unwrap_or(0))?;
    let mut worst = 0.0f64;
    for r in &reports {
        say!(
            "{:<24} {:>6} coords  max rel err {:.3e}",
            r.name,
            r.coordinates,
            r.max_rel_err
        );
        worst = worst.max(r.max_rel_err);
    }
    say!("max rel err {worst:.3e}");
    if let Some(dir) = &o.out {
        create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &reports)?;
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(CliError::Check(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
