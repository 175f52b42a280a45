use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DiTConfig;
use super::lora::{LoraAdapter, LoraSet};
use super::params::{role_of, ModelWeights, ParamSet, Role};
use crate::codec::CodecParams;
use crate::error::{Error, Result};
use crate::numerics::io::{read_tensor, write_atomic, write_tensor, Dtype};
use crate::numerics::Tensor;

pub const INDEX_FILE: &str = "index.json";
pub const CONFIG_FILE: &str = "config.json";
const CODEC_MIX: &str = "codec.mix";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraMeta {
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecMeta {
    pub seed: u64,
    pub video_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub version: u32,
    pub lora: Option<LoraMeta>,
    pub codec: Option<CodecMeta>,
    pub entries: Vec<IndexEntry>,
}

/// Everything needed to rebuild a generator: DiT + audio weights, optional
/// adapters, optional codec.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub adapters: Option<LoraSet>,
    pub codec: Option<CodecParams>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self.weights.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        if let Some(a) = &self.adapters {
            out.extend(a.param_names().map(|n| {
                let t = a.param(&n).expect("listed name");
                (n, t)
            }));
        }
        if let Some(c) = &self.codec {
            out.push((CODEC_MIX.to_string(), &c.mix));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (name, t) in self.tensors() {
            let file = format!("{name}.oavt");
            write_tensor(&dir.join(&file), t, Dtype::F64)?;
            entries.push(IndexEntry {
                role: role_of(&name),
                name,
                file,
                dtype: Dtype::F64,
                shape: t.shape().to_vec(),
            });
        }
        let lora = self
            .adapters
            .as_ref()
            .and_then(|a| a.adapters.values().next())
            .map(|ad| LoraMeta {
                rank: ad.rank,
                alpha: ad.alpha,
            });
        let index = CheckpointIndex {
            version: FORMAT_VERSION,
            lora,
            codec: self.codec.as_ref().map(|c| CodecMeta {
                seed: c.seed,
                video_channels: c.video_channels,
            }),
            entries,
        };
        write_json(&dir.join(CONFIG_FILE), &self.weights.config)?;
        write_json(&dir.join(INDEX_FILE), &index)
    }

    /// Loads and checks every tensor against the shapes the config implies.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: DiTConfig = read_json(&dir.join(CONFIG_FILE))?;
        config.validate()?;
        let index: CheckpointIndex = read_json(&dir.join(INDEX_FILE))?;
        if index.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported",
                index.version
            )));
        }
        let expected = ModelWeights::init(&config)?;
        let mut params = ParamSet::new();
        let mut lora: BTreeMap<String, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
        let mut mix = None;
        for e in &index.entries {
            if e.role != role_of(&e.name) {
                return Err(Error::Format(format!("entry {} has role {:?}", e.name, e.role)));
            }
            let t = read_tensor(&dir.join(&e.file))?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Format(format!(
                    "{}: index says {:?}, file holds {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
            match e.role {
                Role::Base | Role::Audio => {
                    let want = expected.get(&e.name)?.shape();
                    if want != t.shape() {
                        return Err(Error::Dimension {
                            op: "checkpoint",
                            lhs: want.to_vec(),
                            rhs: t.shape().to_vec(),
                        });
                    }
                    params.insert(e.name.clone(), t);
                }
                Role::Lora => {
                    let bad = || Error::Format(format!("malformed adapter entry {}", e.name));
                    let (target, factor) = e
                        .name
                        .strip_prefix("lora.")
                        .and_then(|r| r.rsplit_once('.'))
                        .ok_or_else(bad)?;
                    let slot = lora.entry(target.to_string()).or_default();
                    match factor {
                        "a" => slot.0 = Some(t),
                        "b" => slot.1 = Some(t),
                        _ => return Err(bad()),
                    }
                }
                Role::Codec => mix = Some(t),
            }
        }
        if let Some(missing) = expected.params.keys().find(|k| !params.contains_key(*k)) {
            return Err(Error::Format(format!("checkpoint lacks {missing}")));
        }
        let weights = ModelWeights { config, params };

        let adapters = match (&index.lora, lora.is_empty()) {
            (_, true) => None,
            (None, false) => return Err(Error::Format("adapter tensors without lora metadata".into())),
            (Some(meta), false) => {
                let mut adapters = BTreeMap::new();
                for (target, pair) in lora {
                    let (Some(a), Some(b)) = pair else {
                        return Err(Error::Format(format!("adapter {target} lacks a factor")));
                    };
                    let w = weights.get(&target)?;
                    if a.shape() != [w.shape()[0], meta.rank] || b.shape() != [meta.rank, w.shape()[1]] {
                        return Err(Error::Format(format!("adapter {target} does not fit {:?}", w.shape())));
                    }
                    adapters.insert(
                        target.clone(),
                        LoraAdapter {
                            target,
                            a,
                            b,
                            rank: meta.rank,
                            alpha: meta.alpha,
                        },
                    );
                }
                Some(LoraSet { adapters })
            }
        };
        let codec = match (index.codec, mix) {
            (Some(m), Some(mix)) => Some(CodecParams::from_mix(mix, m.video_channels, m.seed)?),
            (None, None) => None,
            _ => {
                return Err(Error::Format(
                    "codec metadata and codec.mix must appear together".into(),
                ))
            }
        };
        Ok(Self {
            weights,
            adapters,
            codec,
        })
    }
}
