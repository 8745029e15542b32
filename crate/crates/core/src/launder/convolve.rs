use rustfft::{num_complex::Complex, FftPlanner};

use super::{ImpulseResponse, LaunderError};
use crate::audio::AudioBuffer;
use crate::augment::resample::resample_by_ratio;

/// Full linear convolution, length `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let padded = |x: &[f64]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let mut fa = padded(a);
    let mut fb = padded(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa.into_iter().take(out_len).map(|c| c.re / n as f64).collect()
}

/// Convolve every channel with `ir` (resampled to the buffer rate if
/// needed) and rescale so the output peak equals the input peak.
pub fn convolve_reverb(buf: &AudioBuffer, ir: &ImpulseResponse) -> Result<AudioBuffer, LaunderError> {
    ir.check()?;
    let kernel: Vec<f64> = if ir.sample_rate_hz == buf.sample_rate_hz() {
        ir.samples.iter().map(|&s| s as f64).collect()
    } else {
        resample_by_ratio(&ir.samples, buf.sample_rate_hz() as f64 / ir.sample_rate_hz as f64)
            .into_iter()
            .map(|s| s as f64)
            .collect()
    };
    let wet: Vec<Vec<f64>> = buf
        .channels()
        .iter()
        .map(|c| fft_convolve(&c.iter().map(|&s| s as f64).collect::<Vec<_>>(), &kernel))
        .collect();
    let in_peak = buf.peak() as f64;
    let out_peak = wet.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if out_peak > 0.0 { in_peak / out_peak } else { 0.0 };
    let channels = wet.into_iter().map(|c| c.into_iter().map(|v| ((v * scale) as f32).clamp(-1.0, 1.0)).collect()).collect();
    AudioBuffer::new(channels, buf.sample_rate_hz()).map_err(|e| LaunderError::InvalidImpulseResponse(e.to_string()))
}
