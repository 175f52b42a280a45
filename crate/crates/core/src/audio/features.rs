use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Features per video frame: log-energy, zero-crossing rate, 14 DFT bins.
pub const FEATURE_DIM: usize = 16;
pub const DFT_BINS: usize = 14;
/// Mean-square energy gain inside `ln(1 + gain·E)`.
pub const ENERGY_GAIN: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    /// `[n]`, values in `[-1, 1]`.
    pub samples: Tensor,
    pub sample_rate: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    /// `[T, FEATURE_DIM]`.
    pub feats: Tensor,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        Ok(Self {
            samples: Tensor::new(vec![n], samples)?,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.numel() == 0
    }

    /// Sample range `[start, end)` of video frame `t`.
    pub fn frame_window(&self, t: usize, fps: f64) -> (usize, usize) {
        frame_window(self.sample_rate, t, fps)
    }

    /// Samples of video frame `t`, or a length error if the waveform is too short.
    pub fn frame_samples(&self, t: usize, fps: f64) -> Result<&[f64]> {
        let (start, end) = self.frame_window(t, fps);
        if end > self.len() {
            return Err(Error::Length {
                required: end,
                available: self.len(),
            });
        }
        Ok(&self.samples.data()[start..end])
    }

    pub fn required_samples(&self, frames: usize, fps: f64) -> usize {
        frame_window(self.sample_rate, frames, fps).0
    }
}

pub fn frame_window(sample_rate: u32, t: usize, fps: f64) -> (usize, usize) {
    let per = sample_rate as f64 / fps;
    let start = (t as f64 * per).round() as usize;
    let end = ((t + 1) as f64 * per).round() as usize;
    (start, end)
}

/// Root-mean-square of each video frame's sample window.
pub fn frame_rms(w: &Waveform, fps: f64, frames: usize) -> Result<Vec<f64>> {
    (0..frames)
        .map(|t| {
            let s = w.frame_samples(t, fps)?;
            Ok((s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt())
        })
        .collect()
}

/// Deterministic per-frame audio descriptor.
///
/// Row `t` reads the samples of `[t/fps, (t+1)/fps)`: `ln(1 + 100·E)` with
/// `E` the mean square, the zero-crossing rate, and the magnitudes of DFT
/// bins 1..=14 of the window (scaled by `2/n`, so a unit sinusoid at a bin
/// centre reads 1). Silence gives an all-zero row.
pub fn extract_features(w: &Waveform, fps: f64, frames: usize) -> Result<FrameFeatures> {
    if frames == 0 || fps <= 0.0 {
        return Err(Error::Config(format!(
            "need frames > 0 and fps > 0, got {frames}, {fps}"
        )));
    }
    let required = w.required_samples(frames, fps);
    if required > w.len() {
        return Err(Error::Length {
            required,
            available: w.len(),
        });
    }
    let mut out = Vec::with_capacity(frames * FEATURE_DIM);
    for t in 0..frames {
        let s = w.frame_samples(t, fps)?;
        out.extend(window_features(s));
    }
    Ok(FrameFeatures {
        feats: Tensor::new(vec![frames, FEATURE_DIM], out)?,
    })
}

fn window_features(s: &[f64]) -> [f64; FEATURE_DIM] {
    let n = s.len() as f64;
    let mut row = [0.0; FEATURE_DIM];
    let energy = s.iter().map(|v| v * v).sum::<f64>() / n;
    row[0] = (ENERGY_GAIN * energy).ln_1p();
    let crossings = s.windows(2).filter(|p| (p[0] < 0.0) != (p[1] < 0.0)).count();
    row[1] = if s.len() > 1 { crossings as f64 / (n - 1.0) } else { 0.0 };
    for k in 1..=DFT_BINS {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &x) in s.iter().enumerate() {
            let phase = TAU * (k * i) as f64 / n;
            re += x * phase.cos();
            im -= x * phase.sin();
        }
        row[1 + k] = 2.0 / n * (re * re + im * im).sqrt();
    }
    row
}
