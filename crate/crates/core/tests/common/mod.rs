#![allow(dead_code)]

use std::path::Path;

use avatar_core::corpus::{build_corpus, Corpus, CorpusConfig, SynthOptions};
use avatar_core::dit::DiTConfig;
use avatar_core::trainer::TrainConfig;

/// 8×8 video, 13 frames: latents of 4 frames × 4×4 tokens.
pub fn tiny_corpus(dir: &Path, n_train: usize, n_test: usize) -> Corpus {
    let cfg = CorpusConfig {
        n_train,
        n_test,
        seed: 1,
        synth: SynthOptions {
            frames: 13,
            height: 8,
            width: 8,
            fps: 16.0,
            silent: false,
        },
        ..CorpusConfig::default()
    };
    build_corpus(&cfg, dir).unwrap();
    Corpus::load(dir).unwrap()
}

pub fn tiny_dit() -> DiTConfig {
    DiTConfig::with_blocks(3, 16, 2, 32)
}

pub fn tiny_train(mode: &str, steps: usize) -> TrainConfig {
    TrainConfig {
        mode: mode.parse().unwrap(),
        steps,
        clip_len: 5,
        dit: tiny_dit(),
        seed: 3,
        ..TrainConfig::default()
    }
}
