//! Evaluation metrics: lip-sync proxy, identity drift, chunk continuity.

use serde::{Deserialize, Serialize};

use crate::audio::{frame_rms, Waveform};
use crate::codec::VideoTensor;
use crate::dit::fnv1a;
use crate::error::{Error, Result};
use crate::long_video::ChunkPlan;
use crate::numerics::Tensor;

pub const REPORT_VERSION: u32 = 1;

/// Half-open pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Roi {
    pub fn area(&self) -> usize {
        (self.bottom - self.top) * (self.right - self.left)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if self.top >= self.bottom || self.left >= self.right || self.bottom > h || self.right > w {
            return Err(Error::Bounds(format!("roi {self:?} does not fit a {h}x{w} frame")));
        }
        Ok(())
    }
}

/// Pearson correlation with a flag for the degenerate case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// One of the series was constant; `r` is reported as 0.
    pub constant: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    assert_eq!(x.len(), y.len(), "pearson needs equal lengths");
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    // Relative tolerance: a series is constant when its spread is at
    // rounding level of its magnitude.
    let flat = |ss: f64, m: f64| ss <= (1e-24 * m * m).max(f64::MIN_POSITIVE) * n;
    if flat(sxx, mx) || flat(syy, my) {
        return Correlation { r: 0.0, constant: true };
    }
    Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        constant: false,
    }
}

/// Per-frame mean brightness (over all channels) inside `roi`.
pub fn roi_series(video: &VideoTensor, roi: &Roi) -> Result<Vec<f64>> {
    roi.check(video.height(), video.width())?;
    let c = video.channels();
    let n = (roi.area() * c) as f64;
    Ok((0..video.len())
        .map(|t| {
            let mut s = 0.0;
            for y in roi.top..roi.bottom {
                for x in roi.left..roi.right {
                    for ch in 0..c {
                        s += video.pixel(t, y, x, ch);
                    }
                }
            }
            s / n
        })
        .collect())
}

/// Correlation between mouth brightness and the per-frame audio RMS.
pub fn sync_proxy(video: &VideoTensor, waveform: &Waveform, roi: &Roi, fps: f64) -> Result<Correlation> {
    let mouth = roi_series(video, roi)?;
    let env = frame_rms(waveform, fps, video.len())?;
    Ok(pearson(&mouth, &env))
}

/// Boolean pixel mask over one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    /// Pixels of `face` that are not in `mouth`.
    pub fn face_without_mouth(height: usize, width: usize, face: &Roi, mouth: &Roi) -> Result<Self> {
        face.check(height, width)?;
        let cells = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width, i % width);
                face.contains(y, x) && !mouth.contains(y, x)
            })
            .collect();
        Ok(Self { height, width, cells })
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Mean over frames `t > 0` of the mean absolute difference to frame 0 on
/// the masked pixels. Zero for a single frame.
pub fn identity_drift(video: &VideoTensor, mask: &Mask) -> Result<f64> {
    if (mask.height, mask.width) != (video.height(), video.width()) {
        return Err(Error::Bounds(format!(
            "mask {}x{} vs frame {}x{}",
            mask.height,
            mask.width,
            video.height(),
            video.width()
        )));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::Config("identity mask is empty".into()));
    }
    if video.len() == 1 {
        return Ok(0.0);
    }
    let c = video.channels();
    let first = video.frame(0);
    let mut total = 0.0;
    for t in 1..video.len() {
        let frame = video.frame(t);
        let mut s = 0.0;
        for (i, _) in mask.cells.iter().enumerate().filter(|(_, &m)| m) {
            for ch in 0..c {
                s += (frame[i * c + ch] - first[i * c + ch]).abs();
            }
        }
        total += s / (n * c) as f64;
    }
    Ok(total / (video.len() - 1) as f64)
}

/// Largest absolute difference at chunk seams: chunk `i`'s last `f` frames
/// against chunk `i+1`'s prefix, and the stitched latents against chunk `i`.
pub fn continuity_check(latents: &Tensor, plan: &ChunkPlan, chunk_outputs: &[Tensor]) -> Result<f64> {
    if chunk_outputs.len() != plan.chunks.len() || latents.shape()[0] != plan.total {
        return Err(Error::Shape(format!(
            "{} chunk outputs and {} latent frames for a plan of {} chunks over {}",
            chunk_outputs.len(),
            latents.shape()[0],
            plan.chunks.len(),
            plan.total
        )));
    }
    if chunk_outputs
        .iter()
        .any(|c| c.shape()[0] != plan.s || c.shape()[1..] != latents.shape()[1..])
    {
        return Err(Error::Shape(format!(
            "chunk outputs must be [{}, ..] slices of {:?}",
            plan.s,
            latents.shape()
        )));
    }
    let f = plan.f;
    let mut worst: f64 = 0.0;
    for (i, pair) in chunk_outputs.windows(2).enumerate() {
        let tail = pair[0].slice_outer(plan.s - f, plan.s)?;
        let head = pair[1].slice_outer(0, f)?;
        let start = plan.chunks[i + 1].write_start;
        let stitched = latents.slice_outer(start, start + f)?;
        worst = worst.max(tail.max_abs_diff(&head)?).max(tail.max_abs_diff(&stitched)?);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub sync_r: f64,
    pub sync_constant: bool,
    pub identity_drift: f64,
    pub continuity_max: f64,
    /// Sync of the same sample generated with audio dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_r_null_audio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_sync_r: f64,
    pub mean_identity_drift: f64,
    pub mean_continuity_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_sync_r_null_audio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub build_id: String,
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
    pub aggregate: Aggregate,
    /// Metrics that need pretrained networks and are not computed.
    pub out_of_scope: Vec<String>,
}

pub const OUT_OF_SCOPE: [&str; 6] = ["FID", "FVD", "Sync-C", "Sync-D", "IQA", "ASE"];

pub fn aggregate(rows: &[ReportRow]) -> Aggregate {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Aggregate {
        mean_sync_r: mean(|r| r.sync_r),
        mean_identity_drift: mean(|r| r.identity_drift),
        mean_continuity_max: mean(|r| r.continuity_max),
        mean_sync_r_null_audio: rows
            .iter()
            .map(|r| r.sync_r_null_audio)
            .sum::<Option<f64>>()
            .filter(|_| !rows.is_empty())
            .map(|s| s / n),
    }
}

impl MetricReport {
    /// Rows are sorted by id so the serialized report is order-independent.
    pub fn new(mut rows: Vec<ReportRow>, config: serde_json::Value) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let echo = serde_json::to_string(&config).expect("json value");
        Self {
            version: REPORT_VERSION,
            build_id: format!("{}-{:012x}", env!("CARGO_PKG_VERSION"), fnv1a(echo.as_bytes()) >> 16),
            aggregate: aggregate(&rows),
            config,
            rows,
            out_of_scope: OUT_OF_SCOPE.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::long_video::plan;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn video_from(frames: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> VideoTensor {
        let mut data = Vec::new();
        for t in 0..frames {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(t, y, x));
                }
            }
        }
        VideoTensor::new(Tensor::new(vec![frames, h, w, 1], data).unwrap(), 16.0).unwrap()
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 5.0];
        assert!((pearson(&x, &x).r - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &x.map(|v| -v)).r + 1.0).abs() < 1e-15);
        let c = pearson(&x, &[0.3; 4]);
        assert_eq!((c.r, c.constant), (0.0, true));
    }

    proptest! {
        #[test]
        fn pearson_is_affine_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 6..40),
            a in 0.01f64..100.0,
            b in -10.0f64..10.0,
            seed in 0u64..1000,
        ) {
            let mut rng = Rng::new(seed);
            let ys: Vec<f64> = xs.iter().map(|x| x + rng.normal()).collect();
            let base = pearson(&xs, &ys);
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            prop_assume!(!base.constant);
            prop_assert!((pearson(&scaled, &ys).r - base.r).abs() < 1e-12);
            let scaled_y: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
            prop_assert!((pearson(&xs, &scaled_y).r - base.r).abs() < 1e-12);
        }
    }

    #[test]
    fn roi_bounds_checked() {
        let v = video_from(1, 8, 8, |_, _, _| 0.0);
        let roi = Roi {
            top: 6,
            bottom: 9,
            left: 0,
            right: 2,
        };
        assert!(matches!(roi_series(&v, &roi), Err(Error::Bounds(_))));
    }

    #[test]
    fn drift_of_a_linear_ramp() {
        // Masked pixels brighten by 0.01 per frame: the mean over t = 1..T−1
        // of 0.01·t is 0.01·T/2.
        let face = Roi {
            top: 2,
            bottom: 6,
            left: 2,
            right: 6,
        };
        let mouth = Roi {
            top: 4,
            bottom: 5,
            left: 3,
            right: 5,
        };
        let mask = Mask::face_without_mouth(8, 8, &face, &mouth).unwrap();
        assert_eq!(mask.count(), 14);
        let v = video_from(9, 8, 8, |t, y, x| {
            if face.contains(y, x) {
                0.2 + 0.01 * t as f64
            } else {
                0.5
            }
        });
        assert!((identity_drift(&v, &mask).unwrap() - 0.045).abs() < 1e-12);
        let single = video_from(1, 8, 8, |_, _, _| 0.3);
        assert_eq!(identity_drift(&single, &mask).unwrap(), 0.0);
        let empty = Mask {
            height: 8,
            width: 8,
            cells: vec![false; 64],
        };
        assert!(matches!(identity_drift(&v, &empty), Err(Error::Config(_))));
    }

    #[test]
    fn continuity_reads_back_an_injected_seam() {
        let p = plan(10, 5, 2).unwrap();
        let mut rng = Rng::new(1);
        let latents = rng.normal_tensor(&[p.total, 1, 1, 2]);
        let outs: Vec<Tensor> = p
            .chunks
            .iter()
            .map(|c| latents.slice_outer(c.write_start, c.write_end).unwrap())
            .collect();
        assert_eq!(continuity_check(&latents, &p, &outs).unwrap(), 0.0);
        let mut bad = outs.clone();
        bad[1].data_mut()[1] += 0.25;
        assert!((continuity_check(&latents, &p, &bad).unwrap() - 0.25).abs() < 1e-15);
        assert!(continuity_check(&latents, &p, &outs[..1]).is_err());

        let single = plan(3, 5, 2).unwrap();
        let l1 = rng.normal_tensor(&[5, 1, 1, 2]);
        assert_eq!(continuity_check(&l1, &single, std::slice::from_ref(&l1)).unwrap(), 0.0);
    }

    #[test]
    fn report_aggregates_match_rows() {
        let rows: Vec<ReportRow> = (0..5)
            .map(|i| ReportRow {
                id: format!("s{}", 4 - i),
                sync_r: 0.1 * i as f64,
                sync_constant: false,
                identity_drift: 0.01 * i as f64,
                continuity_max: 0.0,
                sync_r_null_audio: None,
            })
            .collect();
        let rep = MetricReport::new(rows, serde_json::json!({"steps": 25}));
        assert_eq!(rep.rows[0].id, "s0");
        let again = aggregate(&rep.rows);
        assert!((again.mean_sync_r - rep.aggregate.mean_sync_r).abs() <= 1e-12);
        assert!((rep.aggregate.mean_sync_r - 0.2).abs() < 1e-12);
        assert!(rep.out_of_scope.contains(&"Sync-C".to_string()));
    }
}
