//! Laundering chains for generated audio: background-noise mixing,
//! impulse-response reverberation, over-the-air re-recording (ingested, or
//! simulated by a tagged surrogate) and their composition.

mod banks;
mod convolve;

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioBuffer};
use crate::augment::{self, resample};
use crate::manifest::{derived_sample_id, Label, Manifest, SampleRecord, Variant};
use crate::provenance::{ProvenanceRecord, ProvenanceStep};
use crate::rng;

pub use banks::{builtin_impulse_responses, builtin_noise_bank, ImpulseResponse, LaunderResources, NoiseBank};
pub use convolve::{convolve_reverb, fft_convolve};

#[derive(Debug, Error)]
pub enum LaunderError {
    #[error("input has zero energy; SNR is undefined")]
    SilentInput,
    #[error("noise bank {0:?} is empty or unknown")]
    NoiseBankEmpty(String),
    #[error("noise clip is shorter than the speech and looping is disabled")]
    NoiseTooShort,
    #[error("impulse response {0:?} is unknown")]
    UnknownImpulseResponse(String),
    #[error("invalid impulse response: {0}")]
    InvalidImpulseResponse(String),
    #[error("unknown parent sample {0}")]
    UnknownParent(String),
    #[error("parent sample {0} is real; only generated audio is laundered")]
    ParentNotGenerated(String),
    #[error("undecodable audio file {0}")]
    UndecodableFile(PathBuf),
    #[error("invalid laundering spec {technique}: {reason}")]
    InvalidSpec { technique: String, reason: String },
    #[error("technique {0} cannot be applied to this input")]
    InvalidInput(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunderTechnique {
    CarNoise,
    Reverb,
    OverAir,
    CarReverbOverAir,
}

impl LaunderTechnique {
    pub const ALL: [LaunderTechnique; 4] =
        [LaunderTechnique::CarNoise, LaunderTechnique::Reverb, LaunderTechnique::OverAir, LaunderTechnique::CarReverbOverAir];

    pub fn as_str(&self) -> &'static str {
        match self {
            LaunderTechnique::CarNoise => "car_noise",
            LaunderTechnique::Reverb => "reverb",
            LaunderTechnique::OverAir => "over_air",
            LaunderTechnique::CarReverbOverAir => "car_reverb_over_air",
        }
    }

    pub fn uses_noise(&self) -> bool {
        matches!(self, LaunderTechnique::CarNoise | LaunderTechnique::CarReverbOverAir)
    }

    pub fn uses_reverb(&self) -> bool {
        matches!(self, LaunderTechnique::Reverb | LaunderTechnique::CarReverbOverAir)
    }

    pub fn is_over_air(&self) -> bool {
        matches!(self, LaunderTechnique::OverAir | LaunderTechnique::CarReverbOverAir)
    }
}

fn default_car_snr_min() -> f64 {
    5.0
}
fn default_car_snr_max() -> f64 {
    20.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunderParams {
    /// `builtin` or a directory of noise WAVs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_bank: Option<String>,
    #[serde(default = "default_car_snr_min")]
    pub snr_db_min: f64,
    #[serde(default = "default_car_snr_max")]
    pub snr_db_max: f64,
    /// Loop the noise clip when it is shorter than the speech.
    #[serde(default = "yes")]
    pub loop_noise: bool,
    /// `builtin`, `builtin-small|medium|large`, a WAV file, or a directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulse_response: Option<String>,
    /// Recording manifest (CSV) for physically re-recorded clips.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recordings: Option<PathBuf>,
    /// Simulate the over-air stage instead of waiting for recordings.
    #[serde(default)]
    pub surrogate: bool,
}

impl Default for LaunderParams {
    fn default() -> Self {
        Self {
            noise_bank: None,
            snr_db_min: default_car_snr_min(),
            snr_db_max: default_car_snr_max(),
            loop_noise: true,
            impulse_response: None,
            recordings: None,
            surrogate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunderSpec {
    pub technique: LaunderTechnique,
    #[serde(flatten)]
    pub params: LaunderParams,
}

impl LaunderSpec {
    /// Builtin noise and IR banks; over-air stages use the surrogate.
    pub fn with_defaults(technique: LaunderTechnique) -> Self {
        let params = LaunderParams {
            noise_bank: technique.uses_noise().then(|| "builtin".to_string()),
            impulse_response: technique.uses_reverb().then(|| "builtin".to_string()),
            surrogate: technique.is_over_air(),
            ..LaunderParams::default()
        };
        Self { technique, params }
    }

    pub fn all_default() -> Vec<LaunderSpec> {
        LaunderTechnique::ALL.iter().map(|&t| Self::with_defaults(t)).collect()
    }

    pub fn variant_id(&self) -> &'static str {
        self.technique.as_str()
    }

    pub fn validate(&self) -> Result<(), LaunderError> {
        let bad = |reason: &str| {
            Err(LaunderError::InvalidSpec { technique: self.technique.as_str().into(), reason: reason.into() })
        };
        let p = &self.params;
        if self.technique.uses_noise() {
            if p.noise_bank.as_deref().map_or(true, str::is_empty) {
                return bad("noise_bank is required");
            }
            if !(p.snr_db_min.is_finite() && p.snr_db_max.is_finite() && p.snr_db_min <= p.snr_db_max) {
                return bad("snr range must be finite with min <= max");
            }
        }
        if self.technique.uses_reverb() && p.impulse_response.as_deref().map_or(true, str::is_empty) {
            return bad("impulse_response is required");
        }
        if self.technique.is_over_air() && p.recordings.is_none() && !p.surrogate {
            return bad("over-air needs a recordings manifest or surrogate = true");
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct TechniqueFile {
    technique: Vec<LaunderSpec>,
}

/// Parse `[[technique]]` tables from TOML.
pub fn techniques_from_toml(text: &str) -> Result<Vec<LaunderSpec>, LaunderError> {
    let f: TechniqueFile =
        toml::from_str(text).map_err(|e| LaunderError::InvalidSpec { technique: "<file>".into(), reason: e.to_string() })?;
    for t in &f.technique {
        t.validate()?;
    }
    Ok(f.technique)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixReport {
    pub offset: usize,
    pub gain: f64,
    pub clip_fraction: f64,
}

/// Mix a seeded segment of `noise` under `buf` at `snr_db` relative to the
/// speech power. `f64::INFINITY` leaves the input untouched.
pub fn mix_background(
    buf: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    rng_seed: u64,
    loop_noise: bool,
) -> Result<(AudioBuffer, MixReport), LaunderError> {
    let speech_power = buf.power();
    if speech_power <= 0.0 {
        return Err(LaunderError::SilentInput);
    }
    if snr_db == f64::INFINITY {
        return Ok((buf.clone(), MixReport { offset: 0, gain: 0.0, clip_fraction: 0.0 }));
    }
    let noise = resample(&noise.downmixed().0, buf.sample_rate_hz()).to_mono_samples();
    if noise.is_empty() {
        return Err(LaunderError::NoiseBankEmpty("<clip>".into()));
    }
    let n = buf.frames();
    let offset = if noise.len() >= n {
        rng::stream(rng_seed, "mix/offset").random_range(0..=noise.len() - n)
    } else if loop_noise {
        rng::stream(rng_seed, "mix/offset").random_range(0..noise.len())
    } else {
        return Err(LaunderError::NoiseTooShort);
    };
    let segment: Vec<f32> = (0..n).map(|i| noise[(offset + i) % noise.len()]).collect();
    let seg_power = audio::mean_power(&segment);
    if seg_power <= 0.0 {
        return Err(LaunderError::NoiseBankEmpty("<silent clip>".into()));
    }
    let gain = (speech_power / 10f64.powf(snr_db / 10.0) / seg_power).sqrt();
    let channels = buf
        .channels()
        .iter()
        .map(|c| c.iter().zip(&segment).map(|(&s, &v)| (s as f64 + gain * v as f64) as f32).collect())
        .collect();
    let (out, clip_fraction) = guard(channels, buf.sample_rate_hz());
    Ok((out, MixReport { offset, gain, clip_fraction }))
}

fn guard(channels: Vec<Vec<f32>>, rate: u32) -> (AudioBuffer, f64) {
    let total: usize = channels.iter().map(Vec::len).sum();
    let clipped = channels.iter().flatten().filter(|s| s.abs() > 1.0).count();
    let channels = channels.into_iter().map(|c| c.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect()).collect();
    (AudioBuffer::new(channels, rate).expect("finite"), if total == 0 { 0.0 } else { clipped as f64 / total as f64 })
}

/// Record a physically re-recorded clip of `parent_sample_id` under
/// `technique` (one of the over-air techniques).
pub fn register_recording(
    parent_sample_id: &str,
    recorded_file: &Path,
    m: &Manifest,
    technique: LaunderTechnique,
) -> Result<SampleRecord, LaunderError> {
    let parent = m.sample(parent_sample_id).ok_or_else(|| LaunderError::UnknownParent(parent_sample_id.to_string()))?;
    if parent.label != Label::Generated {
        return Err(LaunderError::ParentNotGenerated(parent_sample_id.to_string()));
    }
    if !technique.is_over_air() {
        return Err(LaunderError::InvalidInput(technique.as_str().into()));
    }
    let buf = audio::read_wav(recorded_file).map_err(|_| LaunderError::UndecodableFile(recorded_file.to_path_buf()))?;
    let sample_id = derived_sample_id(&parent.sample_id, technique.as_str());
    Ok(SampleRecord {
        file_path: format!("{}/{}.wav", parent.source_id, sample_id),
        sample_id,
        source_id: parent.source_id.clone(),
        label: parent.label,
        duration_s: buf.duration_s(),
        sample_rate_hz: buf.sample_rate_hz(),
        variant: Variant::new(technique.as_str()),
        parent_sample_id: Some(parent.sample_id.clone()),
    })
}

pub fn register_over_air(parent_sample_id: &str, recorded_file: &Path, m: &Manifest) -> Result<SampleRecord, LaunderError> {
    register_recording(parent_sample_id, recorded_file, m, LaunderTechnique::OverAir)
}

/// One row of an over-air recording manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingRow {
    pub parent_sample_id: String,
    pub recorded_path: PathBuf,
    #[serde(default)]
    pub rig_notes: String,
}

/// Read a recording manifest: CSV with header
/// `parent_sample_id,recorded_path,rig_notes`. Relative paths resolve
/// against the CSV's directory.
pub fn read_recording_manifest(path: &Path) -> Result<Vec<RecordingRow>, LaunderError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LaunderError::Io(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    reader
        .deserialize()
        .map(|r| {
            let mut row: RecordingRow = r.map_err(|e| LaunderError::Io(e.to_string()))?;
            if row.recorded_path.is_relative() {
                row.recorded_path = base.join(&row.recorded_path);
            }
            Ok(row)
        })
        .collect()
}

/// Replace the pending over-air records of a laundering manifest with the
/// ingested recordings, copying audio under `derived_root`. `parents` must
/// hold the original clips. Returns the number of ingested recordings.
pub fn ingest_recordings(
    laundered: &mut Manifest,
    parents: &Manifest,
    rows: &[RecordingRow],
    derived_root: &Path,
) -> Result<usize, LaunderError> {
    for row in rows {
        let slot = laundered
            .samples
            .iter()
            .position(|s| {
                s.parent_sample_id.as_deref() == Some(row.parent_sample_id.as_str())
                    && LaunderTechnique::ALL.iter().any(|t| t.is_over_air() && t.as_str() == s.variant.as_str())
            })
            .ok_or_else(|| LaunderError::UnknownParent(row.parent_sample_id.clone()))?;
        let technique = LaunderTechnique::ALL
            .into_iter()
            .find(|t| t.as_str() == laundered.samples[slot].variant.as_str())
            .expect("slot variant is an over-air technique");
        let record = register_recording(&row.parent_sample_id, &row.recorded_path, parents, technique)?;
        let dest = derived_root.join(&record.file_path);
        if let Some(dir) = dest.parent() {
            std::fs::create_dir_all(dir).map_err(|e| LaunderError::Io(e.to_string()))?;
        }
        std::fs::copy(&row.recorded_path, &dest).map_err(|e| LaunderError::Io(e.to_string()))?;
        laundered.samples[slot] = record;
    }
    Ok(rows.len())
}

/// Software stand-in for loudspeaker playback and re-recording: small-room
/// reverb, 100-8000 Hz band limit and a noise floor 35 dB below the signal.
/// Never a claim about any physical rig.
pub fn over_air_surrogate(buf: &AudioBuffer, seed: u64) -> Result<(AudioBuffer, ProvenanceStep), LaunderError> {
    let ir = builtin_impulse_responses().into_iter().find(|ir| ir.id == "builtin-small").expect("bundled");
    let room = convolve_reverb(buf, &ir)?;
    let (limited, _) = augment::band_pass(&room, 100.0, 8000.0);
    let (noisy, _) = augment::add_noise(&limited, 35.0, seed).map_err(|_| LaunderError::SilentInput)?;
    let step = ProvenanceStep::new("over_air")
        .with("surrogate", true)
        .with("impulse_response", ir.id)
        .with("band_hz", serde_json::json!([100.0, 8000.0]))
        .with("noise_floor_snr_db", 35.0);
    Ok((noisy, step))
}

pub enum LaunderInput<'a> {
    Audio(&'a AudioBuffer),
    /// A physical recording closing an over-air chain. `software_stage` is
    /// the provenance of the exported audio, if any.
    Recording {
        parent_sample_id: &'a str,
        recorded_file: &'a Path,
        manifest: &'a Manifest,
        software_stage: Option<&'a ProvenanceRecord>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LaunderOutput {
    Audio(AudioBuffer),
    /// Software stages done; this audio must be played back and recorded.
    AwaitingPlayback(AudioBuffer),
    Recorded(SampleRecord),
}

fn noise_stage(
    spec: &LaunderSpec,
    buf: &AudioBuffer,
    seed: u64,
    res: &LaunderResources,
) -> Result<(AudioBuffer, ProvenanceStep), LaunderError> {
    let bank_id = spec.params.noise_bank.clone().unwrap_or_default();
    let bank = res.noise_banks.get(&bank_id).filter(|b| !b.clips.is_empty()).ok_or_else(|| LaunderError::NoiseBankEmpty(bank_id.clone()))?;
    let mut r = rng::stream(seed, "launder/car");
    let (clip_id, clip) = &bank.clips[r.random_range(0..bank.clips.len())];
    let (lo, hi) = (spec.params.snr_db_min, spec.params.snr_db_max);
    let snr = if lo == hi { lo } else { r.random_range(lo..=hi) };
    let (out, report) = mix_background(buf, clip, snr, seed, spec.params.loop_noise)?;
    let step = ProvenanceStep::new("car_noise")
        .with("noise_bank", bank_id)
        .with("noise_clip", clip_id.clone())
        .with("snr_db", snr)
        .with("offset", report.offset)
        .with("gain", report.gain)
        .with("clip_fraction", report.clip_fraction);
    Ok((out, step))
}

fn reverb_stage(
    spec: &LaunderSpec,
    buf: &AudioBuffer,
    seed: u64,
    res: &LaunderResources,
) -> Result<(AudioBuffer, ProvenanceStep), LaunderError> {
    let set_id = spec.params.impulse_response.clone().unwrap_or_default();
    let set = res.impulse_responses.get(&set_id).filter(|s| !s.is_empty()).ok_or_else(|| LaunderError::UnknownImpulseResponse(set_id.clone()))?;
    let ir = &set[rng::stream(seed, "launder/ir").random_range(0..set.len())];
    let out = convolve_reverb(buf, ir)?;
    Ok((out, ProvenanceStep::new("reverb").with("impulse_response", ir.id.clone())))
}

/// Apply a laundering technique. Software stages (noise, reverb) run on
/// audio input; over-air stages are either simulated (`surrogate`) or
/// exported for playback and closed later by a `Recording` input.
pub fn apply_launder(
    spec: &LaunderSpec,
    input: LaunderInput<'_>,
    seed: u64,
    res: &LaunderResources,
) -> Result<(LaunderOutput, ProvenanceRecord), LaunderError> {
    spec.validate()?;
    let mut prov = ProvenanceRecord::new(spec.technique.as_str(), seed);
    match input {
        LaunderInput::Audio(buf) => {
            let (mut current, downmixed) = buf.downmixed();
            prov.downmixed = downmixed;
            if spec.technique.uses_noise() {
                let (out, step) = noise_stage(spec, &current, seed, res)?;
                current = out;
                prov.steps.push(step);
            }
            if spec.technique.uses_reverb() {
                let (out, step) = reverb_stage(spec, &current, seed, res)?;
                current = out;
                prov.steps.push(step);
            }
            if !spec.technique.is_over_air() {
                return Ok((LaunderOutput::Audio(current), prov));
            }
            prov.steps.push(ProvenanceStep::new("export"));
            if spec.params.surrogate {
                let (out, step) = over_air_surrogate(&current, seed)?;
                prov.steps.push(step);
                prov.surrogate = true;
                Ok((LaunderOutput::Audio(out), prov))
            } else {
                Ok((LaunderOutput::AwaitingPlayback(current), prov))
            }
        }
        LaunderInput::Recording { parent_sample_id, recorded_file, manifest, software_stage } => {
            if !spec.technique.is_over_air() {
                return Err(LaunderError::InvalidInput(spec.technique.as_str().into()));
            }
            let record = register_recording(parent_sample_id, recorded_file, manifest, spec.technique)?;
            if let Some(stage) = software_stage {
                prov.steps.extend(stage.steps.iter().cloned());
            }
            if !prov.steps.iter().any(|s| s.name == "export") {
                prov.steps.push(ProvenanceStep::new("export"));
            }
            prov.steps.push(
                ProvenanceStep::new("over_air")
                    .with("recorded_file", recorded_file.display().to_string())
                    .with("duration_s", record.duration_s),
            );
            Ok((LaunderOutput::Recorded(record), prov))
        }
    }
}
