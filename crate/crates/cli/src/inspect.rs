//! Human-readable summaries of on-disk artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use avatar_core::audio::wav::decode_wav;
use avatar_core::corpus::{Manifest, Split, MANIFEST_FILE};
use avatar_core::dit::{role_of, Checkpoint, INDEX_FILE};
use avatar_core::metrics::MetricReport;
use avatar_core::numerics::io::{decode_tensor, MAGIC};
use avatar_core::trainer::TrainState;
use avatar_core::{Error, Tensor};

use crate::commands::CliError;

fn tensor_stats(t: &Tensor) -> Value {
    let d = t.data();
    let (lo, hi) = d
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    json!({
        "shape": t.shape(),
        "numel": t.numel(),
        "min": lo,
        "max": hi,
        "mean": d.iter().sum::<f64>() / d.len() as f64,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn checkpoint(dir: &Path) -> Result<Value, CliError> {
    let ck = Checkpoint::load(dir)?;
    let mut by_role: BTreeMap<String, usize> = BTreeMap::new();
    for (name, t) in &ck.weights.params {
        *by_role
            .entry(format!("{:?}", role_of(name)).to_lowercase())
            .or_default() += t.numel();
    }
    let lora = ck.adapters.as_ref().map(|a| {
        let first = a.adapters.values().next();
        json!({
            "targets": a.adapters.len(),
            "rank": first.map(|x| x.rank),
            "alpha": first.map(|x| x.alpha),
            "parameters": a.param_names().filter_map(|n| a.param(&n).map(Tensor::numel)).sum::<usize>(),
        })
    });
    Ok(json!({
        "kind": "checkpoint",
        "config": ck.weights.config,
        "tensors": ck.weights.params.len(),
        "parameters_by_role": by_role,
        "lora": lora,
        "codec": ck.codec.as_ref().map(|c| json!({"seed": c.seed, "video_channels": c.video_channels})),
    }))
}

fn corpus(dir: &Path) -> Result<Value, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    let m: Manifest = serde_json::from_str(&text).map_err(|source| CliError::Json { path, source })?;
    let count = |s: Split| m.entries.iter().filter(|e| e.split == s).count();
    let mut prompts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &m.entries {
        *prompts.entry(&e.prompt).or_default() += 1;
    }
    Ok(json!({
        "kind": "corpus",
        "version": m.version,
        "train": count(Split::Train),
        "test": count(Split::Test),
        "config": m.config,
        "prompts": prompts,
    }))
}

/// Dispatches on directory contents or file magic.
pub fn summarize(path: &Path) -> Result<Value, CliError> {
    if path.is_dir() {
        if path.join(INDEX_FILE).exists() {
            return checkpoint(path);
        }
        if path.join(MANIFEST_FILE).exists() {
            return corpus(path);
        }
        return Err(Error::Format(format!("{} is neither a checkpoint nor a corpus", path.display())).into());
    }
    let bytes = read(path)?;
    if bytes.starts_with(MAGIC) {
        let (t, dtype) = decode_tensor(&bytes)?;
        let mut v = tensor_stats(&t);
        v["kind"] = json!("tensor");
        v["dtype"] = json!(dtype);
        return Ok(v);
    }
    if bytes.starts_with(b"RIFF") {
        let w = decode_wav(&bytes)?;
        let d = w.samples.data();
        let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len().max(1) as f64).sqrt();
        return Ok(json!({
            "kind": "wav",
            "sample_rate": w.sample_rate,
            "samples": w.len(),
            "seconds": w.len() as f64 / w.sample_rate as f64,
            "rms": rms,
        }));
    }
    if bytes.starts_with(b"OATS") {
        let s = TrainState::decode(&bytes)?;
        return Ok(json!({
            "kind": "train_state",
            "step": s.step,
            "ema_loss": s.ema_loss,
            "tensors_with_moments": s.moments.len(),
        }));
    }
    if let Ok(r) = serde_json::from_slice::<MetricReport>(&bytes) {
        return Ok(json!({
            "kind": "report",
            "build_id": r.build_id,
            "rows": r.rows.len(),
            "aggregate": r.aggregate,
            "out_of_scope": r.out_of_scope,
        }));
    }
    Err(Error::Format(format!("{}: unrecognized file", path.display())).into())
}
