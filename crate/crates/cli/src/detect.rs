//! Reference detector: spectral flatness of the long-term average power
//! spectrum. Scores are `1 - flatness`; clips scoring at least
//! [`THRESHOLD`] are called generated.
//!
//! Follows the detector contract: reads `<dataset_dir>/files.txt` and writes
//! a submission CSV to `<output>`.

use std::path::Path;
use std::time::Instant;

use blindeval::audio::read_wav;
use blindeval::runner::LISTING;
use blindeval::scoring::write_submission;
use blindeval::{DecisionRecord, Label};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::CliError;

pub const FRAME: usize = 1024;
pub const HOP: usize = 512;
pub const THRESHOLD: f64 = 0.5;

/// Flatness in `[0, 1]`: geometric over arithmetic mean of the averaged
/// power spectrum (DC excluded). Zero for silence.
pub fn spectral_flatness(samples: &[f32]) -> f64 {
    let mut padded = samples.to_vec();
    if padded.len() < FRAME {
        padded.resize(FRAME, 0.0);
    }
    let window: Vec<f64> =
        (0..FRAME).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / FRAME as f64).cos()).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FRAME);
    let mut power = vec![0.0f64; FRAME / 2];
    let mut frame = vec![Complex::new(0.0, 0.0); FRAME];
    for start in (0..=padded.len() - FRAME).step_by(HOP) {
        for (i, c) in frame.iter_mut().enumerate() {
            *c = Complex::new(padded[start + i] as f64 * window[i], 0.0);
        }
        fft.process(&mut frame);
        for (p, c) in power.iter_mut().zip(&frame[1..=FRAME / 2]) {
            *p += c.norm_sqr();
        }
    }
    let mean = power.iter().sum::<f64>() / power.len() as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let floor = mean * 1e-12;
    let log_mean = power.iter().map(|p| (p + floor).ln()).sum::<f64>() / power.len() as f64;
    (log_mean.exp() / mean).clamp(0.0, 1.0)
}

pub fn run(dataset_dir: &Path, output: &Path) -> Result<usize, CliError> {
    let listing = std::fs::read_to_string(dataset_dir.join(LISTING))?;
    let mut records = Vec::new();
    for name in listing.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let started = Instant::now();
        let buf = read_wav(&dataset_dir.join(name)).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        let score = 1.0 - spectral_flatness(&buf.to_mono_samples());
        records.push(DecisionRecord {
            sample_id: name.strip_suffix(".wav").unwrap_or(name).to_string(),
            decision: if score >= THRESHOLD { Label::Generated } else { Label::Real },
            score,
            inference_time_s: started.elapsed().as_secs_f64(),
        });
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(output)?;
    write_submission(&records, file)?;
    Ok(records.len())
}
