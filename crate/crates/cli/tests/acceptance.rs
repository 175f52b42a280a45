//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The end-to-end criteria train through the shipped `configs/` with the
//! release binary's code path and take several minutes on one core.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use avatar_core::audio::{extract_features, frame_window, pack, PackedAudio, Waveform, GROUP_DIM, PACK_DIM};
use avatar_core::codec::{decode, encode, CodecParams, VideoTensor};
use avatar_core::corpus::{synth_sample, CorpusConfig, SynthOptions};
use avatar_core::diffusion::{cfg_combine, CfgParams, NoiseSchedule, SamplerConfig};
use avatar_core::dit::{
    adaptable_targets, gradient_suite, merge_lora, unmerge_lora, AudioInput, DiTConfig, DitModel, ForwardInput,
    LoraSet, ModelWeights, TextEmbedding, PACK_NAME,
};
use avatar_core::evaluate::EvalConfig;
use avatar_core::long_video::{generate_long, plan, GenerationRequest, Generator};
use avatar_core::metrics::continuity_check;
use avatar_core::trainer::TrainConfig;
use avatar_core::{Rng, Tensor};
use common::{ok, tree, write_small_configs};
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let reports = gradient_suite(0).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    for needed in ["linear", "layernorm", "attention", "ffn", "audio_pack", "dit_block"] {
        ensure(names.contains(&needed), || format!("suite lacks {needed}"))?;
    }
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    ensure(worst < 1e-4, || format!("max rel err {worst:.3e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "max rel err {worst:.2e} over {} cases in {secs:.2} s",
        reports.len()
    ))
}

fn codec_round_trip() -> Outcome {
    let mut rng = Rng::new(21);
    let mut worst = 0.0f64;
    for channels in [1, 3] {
        let p = CodecParams::new(channels, 5);
        for t in [1usize, 5, 9, 13] {
            let shape = [t, 16, 16, channels];
            let data = (0..shape.iter().product::<usize>()).map(|_| rng.uniform()).collect();
            let v = VideoTensor::new(Tensor::new(shape.to_vec(), data).unwrap(), 16.0).unwrap();
            let z = encode(&v, &p).map_err(|e| e.to_string())?;
            ensure(z.latents.shape()[0] == t.div_ceil(4), || {
                format!("T={t}: {} latents", z.latents.shape()[0])
            })?;
            let back = decode(&z, &p).map_err(|e| e.to_string())?;
            ensure(back.frames.shape() == v.frames.shape(), || {
                format!("T={t}: shape {:?}", back.frames.shape())
            })?;
            worst = worst.max(back.frames.max_abs_diff(&v.frames).unwrap());
        }
    }
    ensure(worst <= 1e-9, || format!("round trip error {worst:.3e}"))?;
    Ok(format!("max error {worst:.2e}, latent counts (T+3)/4"))
}

fn audio_locality() -> Outcome {
    let frames = 33;
    let fps = 16.0;
    let sample = synth_sample(
        3,
        &SynthOptions {
            frames,
            ..SynthOptions::default()
        },
    )
    .unwrap();
    let wave = sample.waveform;
    let w_pack = Rng::new(4).normal_tensor(&[GROUP_DIM, PACK_DIM]);
    let packed = |w: &Waveform| pack(&extract_features(w, fps, frames).unwrap(), &w_pack).unwrap();
    let base = packed(&wave);
    ensure(base.len() == frames.div_ceil(4), || {
        format!("{} packed rows", base.len())
    })?;
    for t in 0..frames {
        let (start, end) = frame_window(wave.sample_rate, t, fps);
        let mut samples = wave.samples.data().to_vec();
        for (i, s) in samples[start..end].iter_mut().enumerate() {
            *s += 0.2 * (i as f64 * 0.9).sin();
        }
        let z = packed(&Waveform::new(samples, wave.sample_rate).unwrap());
        let moved: Vec<usize> = (0..z.len()).filter(|&j| z.z_a.row(j) != base.z_a.row(j)).collect();
        ensure(moved == [t.div_ceil(4)], || {
            format!("audio frame {t} moved rows {moved:?}")
        })?;
    }

    let mut cfg = DiTConfig::with_blocks(3, 16, 2, 32);
    cfg.latent_channels = 4;
    let mut weights = ModelWeights::init(&cfg).unwrap();
    weights.randomize_audio(8);
    let model = DitModel::new(weights, None);
    let mut rng = Rng::new(9);
    let z_t = rng.normal_tensor(&[3, 2, 2, 4]);
    let reference = rng.normal_tensor(&[2, 2, 4]);
    let text = TextEmbedding::from_prompt("a face speaking", 16);
    let run = |audio: Option<&PackedAudio>| {
        model
            .forward(&ForwardInput {
                z_t: &z_t,
                t: 0.4,
                text: &text,
                audio: audio.map(AudioInput::Packed),
                reference: &reference,
            })
            .unwrap()
    };
    let silent = PackedAudio {
        z_a: Tensor::zeros(&[3, PACK_DIM]),
    };
    let loud = PackedAudio {
        z_a: rng.normal_tensor(&[3, PACK_DIM]),
    };
    let absent = run(None);
    let diff = run(Some(&silent)).max_abs_diff(&absent).unwrap();
    ensure(diff == 0.0, || format!("zero audio moved the output by {diff:e}"))?;
    ensure(run(Some(&loud)) != absent, || "non-zero audio had no effect".into())?;
    Ok(format!(
        "{frames} frames each move one packed row; zero audio changes output by exactly 0"
    ))
}

fn lora_algebra() -> Outcome {
    let cfg = DiTConfig::with_blocks(3, 16, 2, 32);
    let mut weights = ModelWeights::init(&cfg).unwrap();
    weights.randomize_audio(2);
    let targets = adaptable_targets(&cfg);
    let zero = LoraSet::init(&targets, &weights, 4, 2.0, 3).unwrap();
    let mut trained = zero.clone();
    let mut rng = Rng::new(4);
    for a in trained.adapters.values_mut() {
        a.b = rng.normal_tensor(a.b.shape()).scale(0.1);
    }
    let base = DitModel::new(weights.clone(), None);
    let untouched = DitModel::new(weights.clone(), Some(zero));
    let lazy = DitModel::new(weights.clone(), Some(trained.clone()));
    let merged_weights = merge_lora(&weights, &trained).unwrap();
    let merged = DitModel::new(merged_weights.clone(), None);

    let prompts = [
        "a face speaking",
        "plain background",
        "round face, dark hair",
        "someone talking slowly",
    ];
    let mut worst = 0.0f64;
    let mut effect = 0.0f64;
    for i in 0..100 {
        let frames = 1 + rng.below(3);
        let z_t = rng.normal_tensor(&[frames, 2, 2, cfg.latent_channels]);
        let reference = rng.normal_tensor(&[2, 2, cfg.latent_channels]);
        let audio = PackedAudio {
            z_a: rng.normal_tensor(&[frames, PACK_DIM]),
        };
        let text = TextEmbedding::from_prompt(prompts[i % prompts.len()], cfg.d_model);
        let input = ForwardInput {
            z_t: &z_t,
            t: rng.uniform(),
            text: &text,
            audio: (i % 5 != 0).then_some(AudioInput::Packed(&audio)),
            reference: &reference,
        };
        let b = base.forward(&input).unwrap();
        ensure(untouched.forward(&input).unwrap() == b, || {
            format!("input {i}: zero-init adapters changed the output")
        })?;
        let l = lazy.forward(&input).unwrap();
        worst = worst.max(l.max_abs_diff(&merged.forward(&input).unwrap()).unwrap());
        effect = effect.max(l.max_abs_diff(&b).unwrap());
    }
    ensure(worst <= 1e-9, || format!("lazy vs merged {worst:.3e}"))?;
    ensure(effect > 1e-6, || "adapters had no effect".into())?;

    let restored = unmerge_lora(&merged_weights, &trained).unwrap();
    let mut back = 0.0f64;
    for (name, t) in &weights.params {
        back = back.max(t.max_abs_diff(&restored.params[name]).unwrap());
    }
    ensure(back <= 1e-9, || format!("merge/unmerge error {back:.3e}"))?;
    Ok(format!(
        "lazy vs merged {worst:.2e} on 100 inputs; zero-init bitwise; unmerge {back:.2e}"
    ))
}

/// Latent slots as the chunking loop moves them around.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Reference,
    Noise(usize),
    Denoised(usize),
}

struct TracedChunk {
    n: usize,
    f_i: usize,
    fed: Vec<Slot>,
}

/// Walks the long-video loop statement by statement on slot labels.
fn trace(l: usize, s: usize, f: usize) -> (usize, usize, Vec<TracedChunk>) {
    let mut n_loops = 1;
    while s + (n_loops - 1) * (s - f) < l + 1 {
        n_loops += 1;
    }
    let l_pad = s + (n_loops - 1) * (s - f) - (l + 1);
    let mut z_t: Vec<Slot> = std::iter::once(Slot::Reference)
        .chain((1..=l + l_pad).map(Slot::Noise))
        .collect();
    let total = l + l_pad + 1;
    let mut n = 0isize;
    let mut z_prefix: Vec<Slot> = Vec::new();
    let mut chunks = Vec::new();
    for i in 1..=n_loops {
        let f_i;
        if i == 1 {
            f_i = 0;
        } else {
            f_i = f;
            z_prefix.append(&mut z_t);
            z_t = std::mem::take(&mut z_prefix);
        }
        n -= f_i as isize;
        let fed = z_t[..s].to_vec();
        let written: Vec<Slot> = (n as usize..n as usize + s).map(Slot::Denoised).collect();
        chunks.push(TracedChunk {
            n: n as usize,
            f_i,
            fed,
        });
        z_t = z_t[s..].to_vec();
        z_prefix = written[s - f..].to_vec();
        n += s as isize;
    }
    assert!(z_t.is_empty(), "noise left over");
    (l_pad, total, chunks)
}

fn plan_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(99);
    for _ in 0..1000 {
        let s = 2 + rng.below(11);
        let f = 1 + rng.below(s - 1);
        let l = 1 + rng.below(200);
        let p = plan(l, s, f).map_err(|e| e.to_string())?;
        let (l_pad, total, chunks) = trace(l, s, f);
        let case = format!("l={l} s={s} f={f}");
        ensure((p.l_pad, p.total, p.n_loops) == (l_pad, total, chunks.len()), || {
            format!("{case}: sizes")
        })?;
        let mut covered = vec![0usize; total];
        for (i, (c, tr)) in p.chunks.iter().zip(&chunks).enumerate() {
            ensure(
                c.audio_start == tr.n && c.prefix_len == tr.f_i && (c.write_start, c.write_end) == (tr.n, tr.n + s),
                || format!("{case}: chunk {i} {c:?}"),
            )?;
            for (k, slot) in tr.fed.iter().enumerate() {
                let want = match (i, k) {
                    (0, 0) => Slot::Reference,
                    (_, k) if k < tr.f_i => Slot::Denoised(tr.n + k),
                    (_, k) => Slot::Noise(tr.n + k),
                };
                ensure(*slot == want, || format!("{case}: chunk {i} slot {k} is {slot:?}"))?;
            }
            for c in &mut covered[c.write_start..c.write_end] {
                *c += 1;
            }
            if i > 0 {
                let prev = p.chunks[i - 1];
                ensure(prev.write_end - c.write_start == f, || {
                    format!("{case}: overlap at chunk {i}")
                })?;
            }
        }
        ensure(covered.iter().all(|&c| c >= 1), || format!("{case}: gap in coverage"))?;
        ensure(p.chunks.last().unwrap().write_end == total, || {
            format!("{case}: last chunk ends early")
        })?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("1000 plans match the traced loop in {secs:.3} s"))
}

fn cfg_identities() -> Outcome {
    let mut rng = Rng::new(31);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let shape = [1 + rng.below(4), 3, 3, 2];
        let (uu, tu, ta) = (
            rng.normal_tensor(&shape),
            rng.normal_tensor(&shape),
            rng.normal_tensor(&shape),
        );
        let one = cfg_combine(
            &uu,
            &tu,
            &ta,
            CfgParams {
                s_text: 1.0,
                s_audio: 1.0,
            },
        )
        .unwrap();
        let zero = cfg_combine(
            &uu,
            &tu,
            &ta,
            CfgParams {
                s_text: 0.0,
                s_audio: 0.0,
            },
        )
        .unwrap();
        for (got, want) in [(&one, &ta), (&zero, &uu)] {
            for (a, b) in got.data().iter().zip(want.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("deviation {worst:.3e}"))?;
    Ok(format!("max coordinate deviation {worst:.1e}"))
}

fn continuity() -> Outcome {
    let cfg = DiTConfig::with_blocks(2, 16, 2, 32);
    let mut weights = ModelWeights::init(&cfg).unwrap();
    weights.randomize_audio(6);
    let model = DitModel::new(weights.clone(), None);
    let codec = CodecParams::new(1, 0);
    let schedule = NoiseSchedule::default();
    let gen = Generator {
        model: &model,
        w_pack: weights.get(PACK_NAME).unwrap(),
        text_dim: 16,
        codec: &codec,
        schedule: &schedule,
    };
    let mut runs = 0;
    for (frames, s, f, pixel_range) in [
        (13, 5, 2, false),
        (33, 5, 2, true),
        (33, 4, 1, false),
        (45, 9, 4, true),
        (29, 3, 2, true),
    ] {
        let sample = synth_sample(
            frames as u64,
            &SynthOptions {
                frames,
                ..SynthOptions::default()
            },
        )
        .unwrap();
        let v = &sample.video;
        let reference = v
            .frames
            .slice_outer(0, 1)
            .unwrap()
            .into_reshape(&[v.height(), v.width(), v.channels()])
            .unwrap();
        let req = GenerationRequest {
            prompt: sample.prompt.clone(),
            s,
            f,
            seed: 17,
            sampler: SamplerConfig {
                steps: 3,
                clip_x0: None,
                pixel_range,
            },
            ..GenerationRequest::default()
        };
        let out = generate_long(&gen, &sample.waveform, &reference, &req).map_err(|e| e.to_string())?;
        let l = frames.div_ceil(4);
        let case = format!("T={frames} s={s} f={f}");
        let c = continuity_check(&out.latents, &out.plan, &out.chunk_outputs).unwrap();
        ensure(c == 0.0, || format!("{case}: continuity {c:e}"))?;
        ensure(out.video.len() == 4 * l - 3, || {
            format!("{case}: {} frames", out.video.len())
        })?;
        let again = generate_long(&gen, &sample.waveform, &reference, &req).unwrap();
        ensure(again.video.frames.data() == out.video.frames.data(), || {
            format!("{case}: rerun differs")
        })?;
        runs += out.plan.chunks.len();
    }
    Ok(format!(
        "5 requests, {runs} chunks: continuity 0, 4l-3 frames, bitwise reruns"
    ))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_config<T: serde::de::DeserializeOwned>(name: &str) -> T {
    let text = std::fs::read_to_string(configs_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[derive(Debug)]
struct ModeResult {
    sync_r: f64,
    null_sync_r: f64,
    drift: f64,
    train_secs: f64,
}

#[derive(Debug)]
struct EndToEnd {
    pretrain_secs: f64,
    modes: BTreeMap<String, ModeResult>,
}

const MODES: [&str; 3] = ["lora", "frozen_dit", "full"];

fn run_end_to_end() -> EndToEnd {
    let work = tempfile::tempdir().unwrap();
    let root = work.path();
    let configs = root.join("configs");
    std::fs::create_dir_all(&configs).unwrap();
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, configs.join(p.file_name().unwrap())).unwrap();
    }
    let timed = |args: &[&str]| {
        let t = Instant::now();
        let out = ok(root, args);
        let secs = t.elapsed().as_secs_f64();
        println!(
            "    {:<60} {:>7.1} s  {}",
            args.join(" "),
            secs,
            out.lines().last().unwrap_or("")
        );
        secs
    };
    timed(&[
        "corpus",
        "gen",
        "--config",
        "configs/corpus.json",
        "--out",
        "runs/corpus",
    ]);
    let pretrain_secs = timed(&["train", "--config", "configs/pretrain.json"]);
    let mut eval: Value = read_config::<Value>("eval.json");
    let mut modes = BTreeMap::new();
    for mode in MODES {
        let cfg = format!("configs/{mode}.json");
        let train_secs = timed(&["train", "--config", &cfg]);
        eval["checkpoint"] = Value::from(format!("../runs/{mode}"));
        let eval_cfg = format!("configs/eval_{mode}.json");
        std::fs::write(root.join(&eval_cfg), serde_json::to_vec_pretty(&eval).unwrap()).unwrap();
        let out_dir = format!("runs/eval_{mode}");
        timed(&["eval", "--config", &eval_cfg, "--out", &out_dir]);
        let report: Value =
            serde_json::from_slice(&std::fs::read(root.join(out_dir).join("report.json")).unwrap()).unwrap();
        let a = &report["aggregate"];
        let rows = report["rows"].as_array().unwrap().len();
        assert_eq!(rows, 8, "{mode}: {rows} evaluated samples");
        modes.insert(
            mode.to_string(),
            ModeResult {
                sync_r: a["mean_sync_r"].as_f64().unwrap(),
                null_sync_r: a["mean_sync_r_null_audio"].as_f64().unwrap(),
                drift: a["mean_identity_drift"].as_f64().unwrap(),
                train_secs,
            },
        );
    }
    EndToEnd { pretrain_secs, modes }
}

fn end_to_end() -> Result<&'static EndToEnd, String> {
    static RUN: OnceLock<Result<EndToEnd, String>> = OnceLock::new();
    RUN.get_or_init(|| catch_unwind(run_end_to_end).map_err(panic_message))
        .as_ref()
        .map_err(|e| format!("end-to-end run failed: {e}"))
}

fn lip_sync() -> Outcome {
    let corpus: CorpusConfig = read_config("corpus.json");
    let lora: TrainConfig = read_config("lora.json");
    let eval: EvalConfig = read_config("eval.json");
    let synth = &corpus.synth;
    ensure(
        (corpus.n_train, corpus.n_test, synth.frames, synth.height, synth.width) == (64, 8, 33, 16, 16),
        || format!("corpus config {corpus:?}"),
    )?;
    ensure(lora.mode.to_string() == "lora" && lora.steps <= 5000, || {
        format!("lora config {lora:?}")
    })?;
    ensure(
        eval.cfg
            == CfgParams {
                s_text: 4.5,
                s_audio: 4.5,
            }
            && eval.sampler.steps == 25
            && eval.null_audio_baseline,
        || format!("eval config {eval:?}"),
    )?;
    let e = end_to_end()?;
    let r = &e.modes["lora"];
    let budget = e.pretrain_secs + r.train_secs;
    ensure(budget <= Duration::from_secs(30 * 60).as_secs_f64(), || {
        format!("training took {budget:.0} s")
    })?;
    ensure(r.sync_r >= 0.5, || format!("sync_r {:.4} < 0.5", r.sync_r))?;
    ensure(r.sync_r >= r.null_sync_r + 0.3, || {
        format!("sync_r {:.4} vs null audio {:.4}", r.sync_r, r.null_sync_r)
    })?;
    Ok(format!(
        "sync_r {:.4} vs null audio {:.4} (gap {:.4}), {} lora steps, training {budget:.0} s",
        r.sync_r,
        r.null_sync_r,
        r.sync_r - r.null_sync_r,
        lora.steps
    ))
}

fn mode_ablation() -> Outcome {
    let budgets: Vec<(usize, f64, u64)> = MODES
        .iter()
        .map(|m| {
            let c: TrainConfig = read_config(&format!("{m}.json"));
            (c.steps, c.lr, c.seed)
        })
        .collect();
    ensure(budgets.windows(2).all(|w| w[0] == w[1]), || {
        format!("budgets differ: {budgets:?}")
    })?;
    let e = end_to_end()?;
    for (mode, r) in &e.modes {
        println!(
            "    {mode:<11} sync_r {:>7.4}  null audio {:>7.4}  identity drift {:.4}  train {:>5.0} s",
            r.sync_r, r.null_sync_r, r.drift, r.train_secs
        );
    }
    let (lora, frozen, full) = (&e.modes["lora"], &e.modes["frozen_dit"], &e.modes["full"]);
    ensure(lora.sync_r >= frozen.sync_r, || {
        format!("lora {:.4} < frozen_dit {:.4}", lora.sync_r, frozen.sync_r)
    })?;
    Ok(format!(
        "lora {:.4} >= frozen_dit {:.4}; full {:.4}",
        lora.sync_r, frozen.sync_r, full.sync_r
    ))
}

/// Runs every command once in `dir` and returns their stdout, in order.
fn cli_session(dir: &Path, threads: &str) -> Vec<String> {
    write_small_configs(dir);
    let commands: [&[&str]; 10] = [
        &["corpus", "gen", "--config", "corpus.json", "--out", "corpus"],
        &["train", "--config", "train.json", "--steps", "3"],
        &["train", "--resume", "--config", "train.json"],
        &["generate", "--config", "generate.json", "--out", "gen", "--seed", "5"],
        &["generate", "--config", "generate_files.json", "--out", "gen_files"],
        &["eval", "--config", "eval.json", "--out", "ev"],
        &["gradcheck", "--seed", "2", "--out", "gc"],
        &["inspect", "ck"],
        &["inspect", "gen/video.oavt"],
        &["inspect", "ev/report.json"],
    ];
    commands
        .iter()
        .map(|args| {
            let mut args = args.to_vec();
            args.extend(["--threads", threads]);
            ok(dir, &args)
        })
        .collect()
}

fn cli_determinism() -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let session = work.path().join("session");
    let mut runs = Vec::new();
    for (i, threads) in ["1", "1", "auto"].into_iter().enumerate() {
        std::fs::create_dir_all(&session).unwrap();
        let stdout = cli_session(&session, threads);
        let files = tree(&session);
        std::fs::rename(&session, work.path().join(format!("run{i}"))).unwrap();
        runs.push((stdout, files));
    }
    let (stdout, files) = &runs[0];
    for (i, (s, f)) in runs.iter().enumerate().skip(1) {
        ensure(s == stdout, || format!("run {i}: stdout differs"))?;
        let differing: Vec<_> = files
            .keys()
            .chain(f.keys())
            .filter(|k| files.get(*k) != f.get(*k))
            .map(|k| k.display().to_string())
            .collect();
        ensure(differing.is_empty(), || format!("run {i}: files differ: {differing:?}"))?;
    }
    let bytes: usize = files.values().map(Vec::len).sum();
    Ok(format!(
        "10 commands, {} files ({bytes} bytes) byte-identical across two runs and --threads auto",
        files.len()
    ))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient integrity", gradients),
        ("codec round trip", codec_round_trip),
        ("audio alignment locality", audio_locality),
        ("lora algebra", lora_algebra),
        ("chunk plan oracle", plan_oracle),
        ("cfg identities", cfg_identities),
        ("long-video continuity", continuity),
        ("end-to-end lip sync", lip_sync),
        ("mode ablation direction", mode_ablation),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Err(panic_message(p)));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
