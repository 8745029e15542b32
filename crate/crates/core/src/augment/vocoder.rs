//! Phase-vocoder time stretching and pitch shifting.
//!
//! Frames are Hann-windowed at a fixed synthesis hop of a quarter frame;
//! the analysis hop is `speed` times the synthesis hop. Each bin's phase is
//! advanced by its measured instantaneous frequency, so stationary partials
//! keep their pitch while the timeline is rescaled.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::resample::resample_by_ratio;
use super::{guarded, AugmentError};
use crate::audio::AudioBuffer;

fn frame_size(sample_rate_hz: u32) -> usize {
    // ~46 ms frames
    ((sample_rate_hz as f64 * 0.046) as usize).next_power_of_two().clamp(256, 4096)
}

fn princ_arg(x: f64) -> f64 {
    x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor()
}

/// Stretch one channel so its length becomes `round(len / speed)`.
pub fn stretch_channel(input: &[f32], speed: f64, fft_len: usize) -> Vec<f32> {
    let out_len = (input.len() as f64 / speed).round() as usize;
    if input.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let hop_s = fft_len / 4;
    let half = fft_len / 2;
    let window: Vec<f64> = (0..fft_len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / fft_len as f64).cos()).collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let frames = out_len / hop_s + 2;
    let mut out = vec![0.0f64; out_len + fft_len];
    let mut norm = vec![0.0f64; out_len + fft_len];
    let mut prev_phase = vec![0.0f64; fft_len];
    let mut synth_phase = vec![0.0f64; fft_len];
    let mut prev_pos: i64 = 0;
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];

    for m in 0..frames {
        let out_center = (m * hop_s) as i64;
        let in_center = (out_center as f64 * speed).round() as i64;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = in_center - half as i64 + i as i64;
            let x = if idx >= 0 && (idx as usize) < input.len() { input[idx as usize] as f64 } else { 0.0 };
            *slot = Complex::new(x * window[i], 0.0);
        }
        fwd.process(&mut buf);
        let analysis_hop = (in_center - prev_pos) as f64;
        for k in 0..fft_len {
            let (mag, phase) = buf[k].to_polar();
            if m == 0 {
                synth_phase[k] = phase;
            } else {
                let omega = 2.0 * PI * k as f64 / fft_len as f64;
                let deviation = princ_arg(phase - prev_phase[k] - omega * analysis_hop);
                let inst_freq = if analysis_hop > 0.0 { omega + deviation / analysis_hop } else { omega };
                synth_phase[k] += inst_freq * hop_s as f64;
            }
            prev_phase[k] = phase;
            buf[k] = Complex::from_polar(mag, synth_phase[k]);
        }
        prev_pos = in_center;
        inv.process(&mut buf);
        for (i, c) in buf.iter().enumerate() {
            let idx = out_center - half as i64 + i as i64;
            if idx >= 0 && (idx as usize) < out.len() {
                out[idx as usize] += c.re / fft_len as f64 * window[i];
                norm[idx as usize] += window[i] * window[i];
            }
        }
    }
    out.iter()
        .zip(&norm)
        .take(out_len)
        .map(|(&y, &w)| if w > 1e-6 { (y / w) as f32 } else { 0.0 })
        .collect()
}

/// Change duration by `1 / speed_factor` while keeping pitch.
pub fn time_stretch(buf: &AudioBuffer, speed_factor: f64) -> Result<AudioBuffer, AugmentError> {
    if !(0.5..=2.0).contains(&speed_factor) {
        return Err(AugmentError::OutOfRange { param: "speed_factor", value: speed_factor });
    }
    if speed_factor == 1.0 {
        return Ok(buf.clone());
    }
    let n = frame_size(buf.sample_rate_hz());
    let channels = buf.channels().iter().map(|c| stretch_channel(c, speed_factor, n)).collect();
    Ok(guarded(channels, buf.sample_rate_hz()).0)
}

/// Scale every frequency by `2^(semitones/12)` while keeping duration:
/// stretch by the pitch ratio, then resample back to the original length.
pub fn pitch_shift(buf: &AudioBuffer, semitones: f64) -> Result<AudioBuffer, AugmentError> {
    if !(semitones.abs() <= 12.0) {
        return Err(AugmentError::OutOfRange { param: "semitones", value: semitones });
    }
    if semitones == 0.0 {
        return Ok(buf.clone());
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let n = frame_size(buf.sample_rate_hz());
    let channels = buf
        .channels()
        .iter()
        .map(|c| {
            let stretched = stretch_channel(c, 1.0 / ratio, n);
            let mut y = resample_by_ratio(&stretched, c.len() as f64 / stretched.len().max(1) as f64);
            y.resize(c.len(), 0.0);
            y
        })
        .collect();
    Ok(guarded(channels, buf.sample_rate_hz()).0)
}
