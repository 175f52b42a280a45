//! Invertible linear video codec with temporal factor 4.
//!
//! The first frame is encoded alone (as a virtual group of four copies of
//! itself); every later latent frame covers four consecutive video frames.
//! A video of `T` frames therefore maps to `(T + 3) / 4` latent frames.
//! Each group is folded 2×2 in space and concatenated in time into `16·C`
//! channels, then multiplied by a fixed orthogonal matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const TEMPORAL_FACTOR: usize = 4;
pub const SPATIAL_FACTOR: usize = 2;

/// Latent frames produced by a video of `t` frames.
pub fn latent_len(t: usize) -> usize {
    (t + 3) / TEMPORAL_FACTOR
}

/// Video frames produced by decoding `l` latent frames.
pub fn video_len(l: usize) -> usize {
    TEMPORAL_FACTOR * l - 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    /// `[T, H, W, C]`, values in `[0, 1]`.
    pub frames: Tensor,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    /// `[L, h, w, c]`.
    pub latents: Tensor,
    /// Frame rate of the source video, carried through to `decode`.
    pub fps: f64,
}

impl VideoTensor {
    pub fn new(frames: Tensor, fps: f64) -> Result<Self> {
        let v = Self { frames, fps };
        v.check()?;
        Ok(v)
    }

    fn check(&self) -> Result<()> {
        let s = self.frames.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("video must be [T,H,W,C], got {s:?}")));
        }
        if s[0] % TEMPORAL_FACTOR != 1 {
            return Err(Error::Alignment(format!("frame count T={} is not 1 mod 4", s[0])));
        }
        if !s[1].is_multiple_of(SPATIAL_FACTOR) || !s[2].is_multiple_of(SPATIAL_FACTOR) {
            return Err(Error::Shape(format!("frame size {}x{} is not even", s[1], s[2])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.height() * self.width() * self.channels();
        &self.frames.data()[t * n..(t + 1) * n]
    }

    /// Pixel `(y, x, ch)` of frame `t`.
    pub fn pixel(&self, t: usize, y: usize, x: usize, ch: usize) -> f64 {
        let (h, w, c) = (self.height(), self.width(), self.channels());
        self.frames.data()[((t * h + y) * w + x) * c + ch]
    }
}

impl LatentVideo {
    pub fn len(&self) -> usize {
        self.latents.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecParams {
    pub seed: u64,
    pub video_channels: usize,
    /// Orthogonal `[16·C, 16·C]`.
    #[serde(skip, default = "empty_mix")]
    pub mix: Tensor,
}

fn empty_mix() -> Tensor {
    Tensor::zeros(&[1, 1])
}

impl CodecParams {
    /// Orthogonal mix from Gram–Schmidt QR of a seeded Gaussian matrix.
    pub fn new(video_channels: usize, seed: u64) -> Self {
        let n = group_width(video_channels);
        let mut rng = Rng::derive(seed, 0xC0DEC);
        let raw = rng.normal_tensor(&[n, n]);
        Self {
            seed,
            video_channels,
            mix: orthonormal_columns(&raw),
        }
    }

    pub fn from_mix(mix: Tensor, video_channels: usize, seed: u64) -> Result<Self> {
        let n = group_width(video_channels);
        if mix.shape() != [n, n] {
            return Err(Error::Shape(format!(
                "codec mix must be [{n},{n}], got {:?}",
                mix.shape()
            )));
        }
        Ok(Self {
            seed,
            video_channels,
            mix,
        })
    }

    pub fn latent_channels(&self) -> usize {
        group_width(self.video_channels)
    }
}

fn group_width(c: usize) -> usize {
    TEMPORAL_FACTOR * SPATIAL_FACTOR * SPATIAL_FACTOR * c
}

/// Columns of `raw` orthonormalized by modified Gram–Schmidt, applied twice.
fn orthonormal_columns(raw: &Tensor) -> Tensor {
    let n = raw.shape()[0];
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| raw.get2(i, j)).collect()).collect();
    for j in 0..n {
        for _pass in 0..2 {
            for p in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[p]).map(|(a, b)| a * b).sum();
                let prev = cols[p].clone();
                for (a, b) in cols[j].iter_mut().zip(&prev) {
                    *a -= dot * b;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = Tensor::zeros(&[n, n]);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out.data_mut()[i * n + j] = v;
        }
    }
    out
}

pub fn encode(v: &VideoTensor, p: &CodecParams) -> Result<LatentVideo> {
    v.check()?;
    let (t, hh, ww, c) = (v.len(), v.height(), v.width(), v.channels());
    if c != p.video_channels {
        return Err(Error::Shape(format!(
            "video has {c} channels, codec expects {}",
            p.video_channels
        )));
    }
    let (h, w) = (hh / SPATIAL_FACTOR, ww / SPATIAL_FACTOR);
    let l = latent_len(t);
    let width = group_width(c);
    let mix = p.mix.data();
    let mut out = vec![0.0; l * h * w * width];
    let mut group = vec![0.0; width];
    for j in 0..l {
        let frames = group_frames(j);
        for y in 0..h {
            for x in 0..w {
                let mut idx = 0;
                for &f in &frames {
                    for dy in 0..SPATIAL_FACTOR {
                        for dx in 0..SPATIAL_FACTOR {
                            for ch in 0..c {
                                group[idx] = v.pixel(f, 2 * y + dy, 2 * x + dx, ch);
                                idx += 1;
                            }
                        }
                    }
                }
                let dst = &mut out[((j * h + y) * w + x) * width..][..width];
                for (a, &g) in group.iter().enumerate() {
                    let row = &mix[a * width..(a + 1) * width];
                    for (d, &m) in dst.iter_mut().zip(row) {
                        *d += g * m;
                    }
                }
            }
        }
    }
    Ok(LatentVideo {
        latents: Tensor::new(vec![l, h, w, width], out)?,
        fps: v.fps,
    })
}

/// Nearest latent (in Euclidean distance) whose decoded pixels lie in
/// `[0, 1]`, token by token. Exact because the mix is orthogonal.
pub fn project_pixel_range(latents: &mut [f64], p: &CodecParams) -> Result<()> {
    let width = p.latent_channels();
    if !latents.len().is_multiple_of(width) {
        return Err(Error::Shape(format!(
            "{} latent values do not split into {width}-channel tokens",
            latents.len()
        )));
    }
    let mix = p.mix.data();
    let mut group = vec![0.0; width];
    for lat in latents.chunks_mut(width) {
        for (a, g) in group.iter_mut().enumerate() {
            let row = &mix[a * width..(a + 1) * width];
            *g = row
                .iter()
                .zip(lat.iter())
                .map(|(m, v)| m * v)
                .sum::<f64>()
                .clamp(0.0, 1.0);
        }
        lat.fill(0.0);
        for (a, &g) in group.iter().enumerate() {
            let row = &mix[a * width..(a + 1) * width];
            for (d, &m) in lat.iter_mut().zip(row) {
                *d += g * m;
            }
        }
    }
    Ok(())
}

fn group_frames(j: usize) -> [usize; 4] {
    if j == 0 {
        [0; 4]
    } else {
        [4 * j - 3, 4 * j - 2, 4 * j - 1, 4 * j]
    }
}

pub fn decode(z: &LatentVideo, p: &CodecParams) -> Result<VideoTensor> {
    let s = z.latents.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("latent must be [L,h,w,c], got {s:?}")));
    }
    let (l, h, w, width) = (s[0], s[1], s[2], s[3]);
    if width % 16 != 0 {
        return Err(Error::Shape(format!(
            "latent channel count {width} not divisible by 16"
        )));
    }
    if width != p.latent_channels() {
        return Err(Error::Shape(format!(
            "latent has {width} channels, codec expects {}",
            p.latent_channels()
        )));
    }
    let c = width / 16;
    let (hh, ww) = (h * SPATIAL_FACTOR, w * SPATIAL_FACTOR);
    let t = video_len(l);
    let mix = p.mix.data();
    let mut frames = vec![0.0; t * hh * ww * c];
    let mut group = vec![0.0; width];
    let src = z.latents.data();
    for j in 0..l {
        let targets = group_frames(j);
        for y in 0..h {
            for x in 0..w {
                let lat = &src[((j * h + y) * w + x) * width..][..width];
                // group = lat · mixᵀ
                for (a, g) in group.iter_mut().enumerate() {
                    let row = &mix[a * width..(a + 1) * width];
                    *g = row.iter().zip(lat).map(|(m, v)| m * v).sum();
                }
                let mut idx = 0;
                for (slot, &f) in targets.iter().enumerate() {
                    let write = j > 0 || slot == 0;
                    for dy in 0..SPATIAL_FACTOR {
                        for dx in 0..SPATIAL_FACTOR {
                            for ch in 0..c {
                                if write {
                                    let (yy, xx) = (2 * y + dy, 2 * x + dx);
                                    frames[((f * hh + yy) * ww + xx) * c + ch] = group[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    VideoTensor::new(Tensor::new(vec![t, hh, ww, c], frames)?, z.fps)
}
