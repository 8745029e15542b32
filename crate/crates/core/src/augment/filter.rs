//! Speech band-pass: Butterworth high-pass and low-pass cascades of biquads.
//!
//! The -3 dB corners sit outside the nominal band so the band edges
//! themselves lose less than 1 dB: order-6 high-pass at `0.8 * low` and
//! order-10 low-pass at `high * 7600 / 7000`. With a 50-7000 Hz band that
//! gives about 0.3 dB at 50 Hz, 24 dB at 25 Hz, 0.6 dB at 7 kHz and more
//! than 20 dB at 10 kHz.

use std::f64::consts::PI;

use serde::Serialize;

use super::guarded;
use crate::audio::AudioBuffer;

pub const HIGHPASS_ORDER: usize = 6;
pub const LOWPASS_ORDER: usize = 10;
const HIGHPASS_CORNER: f64 = 0.8;
const LOWPASS_CORNER: f64 = 7600.0 / 7000.0;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// RBJ cookbook section; `highpass` selects the high-pass numerator.
    fn new(fc: f64, q: f64, fs: f64, highpass: bool) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = if highpass {
            [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0]
        } else {
            [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0]
        };
        Biquad { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + z1;
            z1 = self.b[1] * *v - self.a[0] * y + z2;
            z2 = self.b[2] * *v - self.a[1] * y;
            *v = y;
        }
    }
}

/// Q of each second-order section of an even-order Butterworth filter.
fn butterworth_qs(order: usize) -> Vec<f64> {
    (1..=order / 2).map(|k| 1.0 / (2.0 * (PI * (2 * k - 1) as f64 / (2 * order) as f64).sin())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterReport {
    pub highpass_hz: f64,
    /// `None` when the upper edge is at or beyond the representable band.
    pub lowpass_hz: Option<f64>,
}

pub fn band_pass(buf: &AudioBuffer, low_hz: f64, high_hz: f64) -> (AudioBuffer, FilterReport) {
    let fs = buf.sample_rate_hz() as f64;
    let nyquist = fs / 2.0;
    let hp = low_hz * HIGHPASS_CORNER;
    let lp = high_hz * LOWPASS_CORNER;
    let mut sections: Vec<Biquad> = butterworth_qs(HIGHPASS_ORDER).into_iter().map(|q| Biquad::new(hp, q, fs, true)).collect();
    let lowpass_hz = if lp < 0.9 * nyquist {
        sections.extend(butterworth_qs(LOWPASS_ORDER).into_iter().map(|q| Biquad::new(lp, q, fs, false)));
        Some(lp)
    } else {
        None
    };
    let channels = buf
        .channels()
        .iter()
        .map(|c| {
            let mut x: Vec<f64> = c.iter().map(|&s| s as f64).collect();
            for s in &sections {
                s.run(&mut x);
            }
            x.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    (guarded(channels, buf.sample_rate_hz()).0, FilterReport { highpass_hz: hp, lowpass_hz })
}

/// The 50-7000 Hz speech filter.
pub fn speech_filter(buf: &AudioBuffer) -> (AudioBuffer, FilterReport) {
    band_pass(buf, 50.0, 7000.0)
}
