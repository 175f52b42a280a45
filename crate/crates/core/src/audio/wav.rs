//! Canonical 44-byte-header, 16-bit mono PCM WAV.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};
use crate::numerics::io::write_atomic;

const FULL_SCALE: f64 = 32767.0;

pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.len() as u32;
    let data_bytes = n * 2;
    let mut out = Vec::with_capacity(44 + data_bytes as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_bytes).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_bytes.to_le_bytes());
    for &s in w.samples.data() {
        let q = (s.clamp(-1.0, 1.0) * FULL_SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let bad = |what: &str| Error::Format(format!("wav: {what}"));
    if bytes.len() < 44 {
        return Err(bad("shorter than the 44-byte header"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" || &bytes[12..16] != b"fmt " || &bytes[36..40] != b"data" {
        return Err(bad("not a canonical RIFF/WAVE file"));
    }
    if u32_at(16) != 16 || u16_at(20) != 1 {
        return Err(bad("only uncompressed PCM is supported"));
    }
    if u16_at(22) != 1 || u16_at(34) != 16 {
        return Err(bad("only 16-bit mono is supported"));
    }
    let sample_rate = u32_at(24);
    let len = u32_at(40) as usize;
    if bytes.len() < 44 + len || !len.is_multiple_of(2) {
        return Err(bad("truncated data chunk"));
    }
    let samples = bytes[44..44 + len]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / FULL_SCALE)
        .collect();
    Waveform::new(samples, sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    write_atomic(path, &encode_wav(w))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Round trip through 16-bit quantization, as stored on disk.
pub fn quantize(w: &Waveform) -> Waveform {
    decode_wav(&encode_wav(w)).expect("freshly encoded wav parses")
}
