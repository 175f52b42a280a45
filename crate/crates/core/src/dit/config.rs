use serde::{Deserialize, Serialize};

use crate::audio::{GROUP_DIM, PACK_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiTConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Spatial patch size; one token per latent pixel per frame.
    pub patch: usize,
    /// First and last block (1-based, inclusive) that receive the audio addend.
    pub injection_first: usize,
    pub injection_last: usize,
    /// Latent channels `c` of the denoised video.
    pub latent_channels: usize,
    /// Size of the learned frame positional table.
    pub max_frames: usize,
    /// Size of the learned spatial positional table (`h·w` upper bound).
    pub max_spatial: usize,
    pub time_dim: usize,
    pub group_dim: usize,
    pub pack_dim: usize,
    /// Restrict self-attention to tokens of the same latent frame.
    /// Diagnostic setting, used to test injection locality.
    pub frame_local_attention: bool,
    pub init_seed: u64,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self::with_blocks(8, 64, 4, 128)
    }
}

impl DiTConfig {
    /// Config with the default injection range `[2, ceil(n_blocks / 2)]`.
    pub fn with_blocks(n_blocks: usize, d_model: usize, n_heads: usize, d_ff: usize) -> Self {
        Self {
            n_blocks,
            d_model,
            n_heads,
            d_ff,
            patch: 1,
            injection_first: 2,
            injection_last: n_blocks.div_ceil(2).max(2),
            latent_channels: 16,
            max_frames: 16,
            max_spatial: 64,
            time_dim: 32,
            group_dim: GROUP_DIM,
            pack_dim: PACK_DIM,
            frame_local_attention: false,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("n_blocks, d_model and d_ff must be positive".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(2 <= self.injection_first
            && self.injection_first <= self.injection_last
            && self.injection_last <= self.n_blocks)
        {
            return bad(format!(
                "injection range [{}, {}] must satisfy 2 <= first <= last <= n_blocks = {}",
                self.injection_first, self.injection_last, self.n_blocks
            ));
        }
        if self.patch != 1 {
            return bad(format!("patch size {} unsupported; only 1", self.patch));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return bad(format!("time_dim {} must be even and positive", self.time_dim));
        }
        if self.group_dim != GROUP_DIM || self.pack_dim != PACK_DIM {
            return bad(format!("audio dims must be {GROUP_DIM} -> {PACK_DIM}"));
        }
        Ok(())
    }

    pub fn injection_layers(&self) -> impl Iterator<Item = usize> {
        self.injection_first..=self.injection_last
    }

    pub fn is_injection_layer(&self, block: usize) -> bool {
        (self.injection_first..=self.injection_last).contains(&block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_injection_range() {
        let c = DiTConfig::default();
        assert_eq!(c.injection_layers().collect::<Vec<_>>(), vec![2, 3, 4]);
        c.validate().unwrap();
        let c = DiTConfig::with_blocks(5, 16, 2, 32);
        assert_eq!((c.injection_first, c.injection_last), (2, 3));
    }

    #[test]
    fn rejects_bad_heads_and_range() {
        let c = DiTConfig {
            n_heads: 3,
            ..DiTConfig::default()
        };
        assert!(c.validate().is_err());
        let c = DiTConfig {
            injection_first: 1,
            ..DiTConfig::default()
        };
        assert!(c.validate().is_err());
        let c = DiTConfig {
            injection_last: 9,
            ..DiTConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_lists_every_field() {
        let json = serde_json::to_value(DiTConfig::default()).unwrap();
        for key in [
            "n_blocks",
            "d_model",
            "n_heads",
            "d_ff",
            "patch",
            "injection_first",
            "injection_last",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let back: DiTConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, DiTConfig::default());
    }
}
