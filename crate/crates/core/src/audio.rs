//! In-memory audio buffers, WAV I/O and the measurement helpers the DSP
//! contracts are checked with.

use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("buffer must have at least one channel")]
    NoChannels,
    #[error("channel {channel} has {found} frames, expected {expected}")]
    RaggedChannels { channel: usize, found: usize, expected: usize },
    #[error("non-finite amplitude at channel {channel}, frame {frame}")]
    NonFinite { channel: usize, frame: usize },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("cannot write {path}: {reason}")]
    Encode { path: String, reason: String },
}

/// Multichannel audio stored as one `Vec<f32>` per channel, amplitudes in
/// `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f32>>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f32>>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if channels.is_empty() {
            return Err(AudioError::NoChannels);
        }
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        let expected = channels[0].len();
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != expected {
                return Err(AudioError::RaggedChannels { channel: c, found: ch.len(), expected });
            }
            if let Some(frame) = ch.iter().position(|s| !s.is_finite()) {
                return Err(AudioError::NonFinite { channel: c, frame });
            }
        }
        Ok(Self { channels, sample_rate_hz })
    }

    pub fn mono(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        Self::new(vec![samples], sample_rate_hz)
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn frames(&self) -> usize {
        self.channels[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate_hz as f64
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> &[f32] {
        &self.channels[index]
    }

    /// First channel of a mono buffer, or the channel mean otherwise.
    pub fn to_mono_samples(&self) -> Vec<f32> {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let n = self.channels.len() as f32;
        (0..self.frames())
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f32>() / n)
            .collect()
    }

    /// Downmix to the canonical mono processing domain. Returns the buffer and
    /// whether a downmix actually happened.
    pub fn downmixed(&self) -> (AudioBuffer, bool) {
        let was_multi = self.channels.len() > 1;
        let mono = AudioBuffer { channels: vec![self.to_mono_samples()], sample_rate_hz: self.sample_rate_hz };
        (mono, was_multi)
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.channels
    }

    pub fn power(&self) -> f64 {
        let total: f64 = self.channels.iter().flat_map(|c| c.iter()).map(|&s| (s as f64) * (s as f64)).sum();
        let count = self.channels.len() * self.frames();
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    pub fn peak(&self) -> f32 {
        self.channels.iter().flat_map(|c| c.iter()).fold(0.0f32, |m, &s| m.max(s.abs()))
    }
}

/// Read a linear-PCM (integer or float) WAV file.
pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let decode_err = |reason: String| AudioError::Decode { path: path.display().to_string(), reason };
    let mut reader = hound::WavReader::open(path).map_err(|e| decode_err(e.to_string()))?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(decode_err("zero channels".into()));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| decode_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| decode_err(e.to_string()))?
        }
    };
    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s.clamp(-1.0, 1.0));
        }
    }
    AudioBuffer::new(channels, spec.sample_rate).map_err(|e| decode_err(e.to_string()))
}

/// Write a 32-bit float linear-PCM WAV file.
pub fn write_wav(path: &Path, buf: &AudioBuffer) -> Result<(), AudioError> {
    let encode_err = |reason: String| AudioError::Encode { path: path.display().to_string(), reason };
    let spec = hound::WavSpec {
        channels: buf.channel_count() as u16,
        sample_rate: buf.sample_rate_hz(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| encode_err(e.to_string()))?;
    for i in 0..buf.frames() {
        for ch in buf.channels() {
            writer.write_sample(ch[i]).map_err(|e| encode_err(e.to_string()))?;
        }
    }
    writer.finalize().map_err(|e| encode_err(e.to_string()))
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64).sqrt()
}

pub fn mean_power(samples: &[f32]) -> f64 {
    let r = rms(samples);
    r * r
}

/// Frequency (Hz) of the strongest spectral bin of a Hann-windowed FFT,
/// refined by parabolic interpolation on the log magnitude.
pub fn dominant_frequency(samples: &[f32], sample_rate_hz: u32) -> f64 {
    let n = samples.len();
    if n < 4 {
        return 0.0;
    }
    let fft_len = n.next_power_of_two() * 2;
    let mut data: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            Complex::new(s as f64 * w, 0.0)
        })
        .collect();
    data.resize(fft_len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(fft_len).process(&mut data);
    let mags: Vec<f64> = data[..fft_len / 2].iter().map(|c| c.norm()).collect();
    let (k, _) = mags
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, 0.0), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    let mut peak = k as f64;
    if k + 1 < mags.len() {
        let (a, b, c) = (mags[k - 1].max(1e-300).ln(), mags[k].max(1e-300).ln(), mags[k + 1].max(1e-300).ln());
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            peak += 0.5 * (a - c) / denom;
        }
    }
    peak * sample_rate_hz as f64 / fft_len as f64
}

pub fn sine(freq_hz: f64, amplitude: f32, duration_s: f64, sample_rate_hz: u32) -> Vec<f32> {
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    (0..n)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / sample_rate_hz as f64).sin() as f32)
        .collect()
}
