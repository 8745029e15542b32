use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{guarded, AugmentError};
use crate::audio::AudioBuffer;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseReport {
    pub requested_snr_db: f64,
    /// Signal power over the power of what was actually added (after clipping).
    pub measured_snr_db: f64,
    pub clip_fraction: f64,
}

pub(crate) fn snr_db(signal: &AudioBuffer, output: &AudioBuffer) -> f64 {
    let mut diff_power = 0.0f64;
    let mut count = 0usize;
    for (a, b) in signal.channels().iter().zip(output.channels()) {
        for (&x, &y) in a.iter().zip(b.iter()) {
            let d = (y - x) as f64;
            diff_power += d * d;
            count += 1;
        }
    }
    let diff_power = diff_power / count.max(1) as f64;
    10.0 * (signal.power() / diff_power).log10()
}

/// Add white Gaussian noise scaled so the signal-to-noise ratio of the
/// added component is exactly `snr_db`, then hard-clip to `[-1, 1]`.
pub fn add_noise(buf: &AudioBuffer, snr_db_target: f64, rng_seed: u64) -> Result<(AudioBuffer, NoiseReport), AugmentError> {
    let signal_power = buf.power();
    if signal_power <= 0.0 {
        return Err(AugmentError::SilentInput);
    }
    if snr_db_target == f64::INFINITY {
        return Ok((buf.clone(), NoiseReport { requested_snr_db: snr_db_target, measured_snr_db: f64::INFINITY, clip_fraction: 0.0 }));
    }
    let mut rng = rng::stream(rng_seed, "gaussian-noise");
    let raw: Vec<Vec<f64>> = buf
        .channels()
        .iter()
        .map(|c| (0..c.len()).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let count = buf.frames() * buf.channel_count();
    let raw_power = raw.iter().flatten().map(|x| x * x).sum::<f64>() / count as f64;
    let target_power = signal_power / 10f64.powf(snr_db_target / 10.0);
    let gain = (target_power / raw_power).sqrt();
    let channels = buf
        .channels()
        .iter()
        .zip(&raw)
        .map(|(c, n)| c.iter().zip(n).map(|(&s, &v)| (s as f64 + gain * v) as f32).collect())
        .collect();
    let (out, clip_fraction) = guarded(channels, buf.sample_rate_hz());
    let measured = snr_db(buf, &out);
    Ok((out, NoiseReport { requested_snr_db: snr_db_target, measured_snr_db: measured, clip_fraction }))
}
