//! Band-limited resampling with a Kaiser-windowed sinc kernel.
//!
//! Cutoff is `ROLLOFF * min(fs_in, fs_out) / 2`, the kernel spans `ZEROS`
//! zero crossings of the sinc on each side, and the window uses
//! `KAISER_BETA` (about -90 dB sidelobes). The kernel is tabulated at
//! `TABLE_RES` points per input sample and linearly interpolated.

use crate::audio::AudioBuffer;

pub const KAISER_BETA: f64 = 8.6;
pub const ROLLOFF: f64 = 0.94;
const ZEROS: f64 = 32.0;
const TABLE_RES: usize = 256;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    half_width: f64,
    table: Vec<f64>,
}

impl Kernel {
    /// `cutoff` in cycles per input sample (< 0.5).
    fn new(cutoff: f64) -> Self {
        let half_width = ZEROS / (2.0 * cutoff);
        let n = (half_width * TABLE_RES as f64).ceil() as usize + 2;
        let i0_beta = bessel_i0(KAISER_BETA);
        let table = (0..n)
            .map(|i| {
                let t = i as f64 / TABLE_RES as f64;
                if t > half_width {
                    return 0.0;
                }
                let x = 2.0 * cutoff * t;
                let sinc = if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
                let r = t / half_width;
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                2.0 * cutoff * sinc * win
            })
            .collect();
        Self { half_width, table }
    }

    fn at(&self, t: f64) -> f64 {
        let pos = t.abs() * TABLE_RES as f64;
        let i = pos as usize;
        if i + 1 >= self.table.len() {
            return 0.0;
        }
        let frac = pos - i as f64;
        self.table[i] * (1.0 - frac) + self.table[i + 1] * frac
    }
}

/// Resample one channel by `ratio = out_rate / in_rate`; output length is
/// `round(len * ratio)`. Output sample `n` sits at input time `n / ratio`.
pub fn resample_by_ratio(input: &[f32], ratio: f64) -> Vec<f32> {
    let out_len = (input.len() as f64 * ratio).round() as usize;
    if (ratio - 1.0).abs() < 1e-12 {
        let mut v = input.to_vec();
        v.resize(out_len, 0.0);
        return v;
    }
    let cutoff = 0.5 * ROLLOFF * ratio.min(1.0);
    let kernel = Kernel::new(cutoff);
    let hw = kernel.half_width;
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = ((t - hw).ceil().max(0.0)) as usize;
            let hi = ((t + hw).floor() as i64).min(input.len() as i64 - 1);
            if hi < lo as i64 {
                return 0.0;
            }
            let mut acc = 0.0f64;
            for (k, &x) in input.iter().enumerate().take(hi as usize + 1).skip(lo) {
                acc += x as f64 * kernel.at(t - k as f64);
            }
            acc as f32
        })
        .collect()
}

/// Number of input samples at each edge affected by kernel truncation.
pub fn edge_samples(in_rate: u32, out_rate: u32) -> usize {
    let ratio = out_rate as f64 / in_rate as f64;
    (ZEROS / (ROLLOFF * ratio.min(1.0))).ceil() as usize
}

/// Resample every channel to `target_rate_hz`. Identity when rates match.
pub fn resample(buf: &AudioBuffer, target_rate_hz: u32) -> AudioBuffer {
    if target_rate_hz == buf.sample_rate_hz() {
        return buf.clone();
    }
    let ratio = target_rate_hz as f64 / buf.sample_rate_hz() as f64;
    let channels = buf.channels().iter().map(|c| resample_by_ratio(c, ratio)).collect();
    super::guarded(channels, target_rate_hz).0
}
