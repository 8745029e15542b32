//! Noise and impulse-response banks. The builtin banks are synthesized
//! deterministically so the pipeline runs without external assets.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LaunderError, LaunderSpec};
use crate::audio::{self, AudioBuffer};
use crate::rng;

const BUILTIN_RATE: u32 = 16000;

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl ImpulseResponse {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, LaunderError> {
        let ir = Self { id: id.into(), samples, sample_rate_hz };
        ir.check()?;
        Ok(ir)
    }

    pub(super) fn check(&self) -> Result<(), LaunderError> {
        let bad = |why: &str| Err(LaunderError::InvalidImpulseResponse(format!("{}: {why}", self.id)));
        if self.samples.is_empty() {
            return bad("empty");
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return bad("non-finite sample");
        }
        if self.samples.iter().all(|&s| s == 0.0) {
            return bad("zero energy");
        }
        if self.sample_rate_hz == 0 {
            return bad("zero sample rate");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LaunderError> {
        let buf = audio::read_wav(path).map_err(|_| LaunderError::UndecodableFile(path.to_path_buf()))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ir").to_string();
        Self::new(id, buf.to_mono_samples(), buf.sample_rate_hz())
    }
}

/// Direct path followed by exponentially decaying diffuse noise reaching
/// -60 dB after `rt60_s`.
fn synthetic_room(id: &str, rt60_s: f64, predelay_s: f64) -> ImpulseResponse {
    let fs = BUILTIN_RATE as f64;
    let len = (rt60_s * fs) as usize;
    let predelay = (predelay_s * fs) as usize;
    let mut r = rng::stream(0, &format!("ir/{id}"));
    let mut samples = vec![0.0f32; len];
    samples[0] = 1.0;
    for (n, s) in samples.iter_mut().enumerate().skip(predelay) {
        let decay = 10f64.powf(-3.0 * n as f64 / (rt60_s * fs));
        let v: f64 = StandardNormal.sample(&mut r);
        *s = (0.3 * v * decay) as f32;
    }
    ImpulseResponse { id: id.to_string(), samples, sample_rate_hz: BUILTIN_RATE }
}

pub fn builtin_impulse_responses() -> Vec<ImpulseResponse> {
    vec![
        synthetic_room("builtin-small", 0.25, 0.003),
        synthetic_room("builtin-medium", 0.5, 0.008),
        synthetic_room("builtin-large", 1.0, 0.015),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    pub id: String,
    pub clips: Vec<(String, AudioBuffer)>,
}

impl NoiseBank {
    /// Every WAV in `dir`, in file-name order.
    pub fn from_dir(id: &str, dir: &Path) -> Result<Self, LaunderError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| LaunderError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let clips = paths
            .iter()
            .map(|p| {
                let buf = audio::read_wav(p).map_err(|_| LaunderError::UndecodableFile(p.clone()))?;
                Ok((p.file_stem().and_then(|s| s.to_str()).unwrap_or("clip").to_string(), buf))
            })
            .collect::<Result<Vec<_>, LaunderError>>()?;
        if clips.is_empty() {
            return Err(LaunderError::NoiseBankEmpty(id.to_string()));
        }
        Ok(Self { id: id.to_string(), clips })
    }
}

/// Cabin-like noise: low-passed brown noise plus an engine hum whose
/// fundamental wanders around `rpm_hz`.
fn cabin_noise(label: &str, rpm_hz: f64, seconds: f64) -> AudioBuffer {
    let fs = BUILTIN_RATE as f64;
    let n = (seconds * fs) as usize;
    let mut r = rng::stream(0, &format!("noise/{label}"));
    let mut brown = 0.0f64;
    let mut phase = 0.0f64;
    let wobble_rate = r.random_range(0.1..0.3);
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let w: f64 = StandardNormal.sample(&mut r);
            brown = 0.995 * brown + 0.05 * w;
            let t = i as f64 / fs;
            let f0 = rpm_hz * (1.0 + 0.05 * (2.0 * PI * wobble_rate * t).sin());
            phase += 2.0 * PI * f0 / fs;
            let hum = 0.5 * phase.sin() + 0.25 * (2.0 * phase).sin() + 0.12 * (3.0 * phase).sin();
            brown + 0.3 * hum
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let scaled = samples.iter().map(|v| (0.5 * v / peak) as f32).collect();
    AudioBuffer::mono(scaled, BUILTIN_RATE).expect("finite")
}

pub fn builtin_noise_bank() -> NoiseBank {
    NoiseBank {
        id: "builtin".into(),
        clips: vec![("cabin-idle".into(), cabin_noise("idle", 28.0, 12.0)), ("cabin-highway".into(), cabin_noise("highway", 55.0, 12.0))],
    }
}

/// Noise banks and impulse-response sets addressable by the ids used in
/// laundering specs.
#[derive(Debug, Clone, Default)]
pub struct LaunderResources {
    pub noise_banks: BTreeMap<String, NoiseBank>,
    pub impulse_responses: BTreeMap<String, Vec<ImpulseResponse>>,
}

impl LaunderResources {
    /// `builtin` noise bank; `builtin` (all rooms) and `builtin-<size>` IRs.
    pub fn builtin() -> Self {
        let irs = builtin_impulse_responses();
        let mut impulse_responses: BTreeMap<String, Vec<ImpulseResponse>> =
            irs.iter().map(|ir| (ir.id.clone(), vec![ir.clone()])).collect();
        impulse_responses.insert("builtin".into(), irs);
        let bank = builtin_noise_bank();
        Self { noise_banks: BTreeMap::from([(bank.id.clone(), bank)]), impulse_responses }
    }

    /// Builtin resources plus whatever paths `specs` reference: a noise bank
    /// directory, or an IR file or directory.
    pub fn for_specs(specs: &[LaunderSpec]) -> Result<Self, LaunderError> {
        let mut res = Self::builtin();
        for spec in specs {
            if let Some(id) = &spec.params.noise_bank {
                if !res.noise_banks.contains_key(id) {
                    res.noise_banks.insert(id.clone(), NoiseBank::from_dir(id, Path::new(id))?);
                }
            }
            if let Some(id) = &spec.params.impulse_response {
                if !res.impulse_responses.contains_key(id) {
                    let path = Path::new(id);
                    let set = if path.is_dir() {
                        let mut files: Vec<_> = std::fs::read_dir(path)
                            .map_err(|e| LaunderError::Io(e.to_string()))?
                            .filter_map(|e| e.ok().map(|e| e.path()))
                            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                            .collect();
                        files.sort();
                        files.iter().map(|p| ImpulseResponse::load(p)).collect::<Result<Vec<_>, _>>()?
                    } else if path.is_file() {
                        vec![ImpulseResponse::load(path)?]
                    } else {
                        return Err(LaunderError::UnknownImpulseResponse(id.clone()));
                    };
                    if set.is_empty() {
                        return Err(LaunderError::UnknownImpulseResponse(id.clone()));
                    }
                    res.impulse_responses.insert(id.clone(), set);
                }
            }
        }
        Ok(res)
    }
}
