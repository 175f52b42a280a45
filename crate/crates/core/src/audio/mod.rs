//! Audio features, the audio pack, and per-block projection addends.

mod features;
mod pack;
pub mod wav;

pub use features::{
    extract_features, frame_rms, frame_window, FrameFeatures, Waveform, DFT_BINS, ENERGY_GAIN, FEATURE_DIM,
};
pub use pack::{group_features, layer_addend, pack, AudioProjector, PackedAudio, GROUP_DIM, PACK_DIM};
