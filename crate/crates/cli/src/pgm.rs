//! Binary greymap (P5) frame dumps.

/// One frame `[H, W, C]` as an 8-bit P5 image; channels are averaged and
/// values clamped to `[0, 1]` before quantization.
pub fn encode(frame: &[f64], height: usize, width: usize, channels: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(height * width);
    for px in frame.chunks(channels).take(height * width) {
        let v = px.iter().sum::<f64>() / channels as f64;
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}
