use std::collections::BTreeMap;

use super::features::{FrameFeatures, FEATURE_DIM};
use crate::codec::{latent_len, TEMPORAL_FACTOR};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const PACK_DIM: usize = 32;
/// Width of one rearranged group: four consecutive feature rows.
pub const GROUP_DIM: usize = TEMPORAL_FACTOR * FEATURE_DIM;

#[derive(Clone, Debug, PartialEq)]
pub struct PackedAudio {
    /// `[L, d_pack]`.
    pub z_a: Tensor,
}

impl PackedAudio {
    pub fn len(&self) -> usize {
        self.z_a.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rows `[start, end)` as a new packed sequence.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            z_a: self.z_a.slice_outer(start, end)?,
        })
    }
}

/// Audio pack rearrangement: three zero rows before the first frame, then
/// consecutive groups of four rows flattened into one `[4·d_a]` row each.
///
/// Output row `j` holds feature rows `4j−3..=4j` (row 0 holds `[0,0,0,f₀]`).
pub fn group_features(f: &FrameFeatures) -> Result<Tensor> {
    let (t, d) = (f.feats.shape()[0], f.feats.shape()[1]);
    if t % TEMPORAL_FACTOR != 1 {
        return Err(Error::Alignment(format!("feature length T={t} is not 1 mod 4")));
    }
    if d != FEATURE_DIM {
        return Err(Error::Shape(format!("feature width {d}, expected {FEATURE_DIM}")));
    }
    let mut padded = vec![0.0; (TEMPORAL_FACTOR - 1) * d];
    padded.extend_from_slice(f.feats.data());
    // Row-major [T+3, d] regrouped as [(T+3)/4, 4·d] is the same buffer.
    Tensor::new(vec![latent_len(t), TEMPORAL_FACTOR * d], padded)
}

/// `z_a = Pack(a)`: rearrange, then a bias-free linear map `[4·d_a, d_pack]`.
pub fn pack(f: &FrameFeatures, w_pack: &Tensor) -> Result<PackedAudio> {
    let groups = group_features(f)?;
    Ok(PackedAudio {
        z_a: groups.matmul(w_pack)?,
    })
}

/// Unshared per-block projections `P_i: [d_pack, d_model]`, keyed by 1-based
/// block index.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioProjector {
    pub layers: BTreeMap<usize, Tensor>,
}

impl AudioProjector {
    pub fn get(&self, layer: usize) -> Result<&Tensor> {
        self.layers.get(&layer).ok_or_else(|| {
            Error::Config(format!(
                "block {layer} is not an injection layer; valid: {:?}",
                self.layers.keys().collect::<Vec<_>>()
            ))
        })
    }
}

/// `P_layer · z_a[j]`, broadcast to every spatial position of latent frame `j`.
pub fn layer_addend(z_a: &PackedAudio, proj: &AudioProjector, layer: usize, spatial: (usize, usize)) -> Result<Tensor> {
    let p = proj.get(layer)?;
    let per_frame = z_a.z_a.matmul(p)?;
    let (l, d) = (per_frame.shape()[0], per_frame.shape()[1]);
    let hw = spatial.0 * spatial.1;
    let mut out = Vec::with_capacity(l * hw * d);
    for j in 0..l {
        for _ in 0..hw {
            out.extend_from_slice(per_frame.row(j));
        }
    }
    Tensor::new(vec![l, spatial.0, spatial.1, d], out)
}
