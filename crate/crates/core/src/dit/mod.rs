//! Toy diffusion transformer with audio injection and LoRA adapters.

mod checkpoint;
mod config;
mod lora;
mod model;
mod params;
mod suite;
mod text;

pub use checkpoint::{Checkpoint, CheckpointIndex, CodecMeta, IndexEntry, LoraMeta, CONFIG_FILE, INDEX_FILE};
pub use config::DiTConfig;
pub use lora::{lora_param_name, merge_lora, unmerge_lora, LoraAdapter, LoraSet, LORA_STD};
pub use model::{block, forward_graph, timestep_embed, timestep_features, AudioInput, Binder, DitModel, ForwardInput};
pub use params::{
    adaptable_targets, proj_name, role_of, trainable_params, ModelWeights, ParamSet, Role, TrainMode, AUDIO_PREFIX,
    PACK_NAME,
};
pub use suite::{gradient_suite, GradReport, SUITE_STEP};
pub use text::{fnv1a, TextEmbedding};
