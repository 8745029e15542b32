//! Post-processing operators applied to generated audio: noise, resampling,
//! pitch and tempo changes, the speech band-pass, and codec chains through
//! external transcoder plugins.

mod filter;
mod noise;
pub mod resample;
mod transcode;
mod vocoder;

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::provenance::{ProvenanceRecord, ProvenanceStep};
use crate::rng;

pub use filter::{band_pass, speech_filter, FilterReport};
pub use noise::{add_noise, NoiseReport};
pub use resample::resample;
pub use transcode::{transcode_chain, PluginRegistry, TranscodeStep, TranscoderPlugin};
pub use vocoder::{pitch_shift, time_stretch};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("input has zero energy; SNR is undefined")]
    SilentInput,
    #[error("{param} = {value} is out of range")]
    OutOfRange { param: &'static str, value: f64 },
    #[error("invalid augmentation spec {id}: {reason}")]
    InvalidSpec { id: String, reason: String },
    #[error("codec chain is empty")]
    EmptyChain,
    #[error("transcoder plugin {0:?} is not available")]
    PluginMissing(String),
    #[error("transcoder step {step} failed (status {status:?}): {diagnostics}")]
    PluginFailed { step: usize, status: Option<i32>, diagnostics: String },
    #[error("cannot decode output of step {step}: {reason}")]
    DecodeFailed { step: usize, reason: String },
    #[error("plugin registry: {0}")]
    Registry(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Clamp to `[-1, 1]`, replacing non-finite values by 0, and return the
/// fraction of samples that had to be touched.
pub(crate) fn guarded(channels: Vec<Vec<f32>>, sample_rate_hz: u32) -> (AudioBuffer, f64) {
    let mut touched = 0usize;
    let mut total = 0usize;
    let channels: Vec<Vec<f32>> = channels
        .into_iter()
        .map(|c| {
            c.into_iter()
                .map(|s| {
                    total += 1;
                    if !s.is_finite() {
                        touched += 1;
                        0.0
                    } else if s.abs() > 1.0 {
                        touched += 1;
                        s.clamp(-1.0, 1.0)
                    } else {
                        s
                    }
                })
                .collect()
        })
        .collect();
    let buf = AudioBuffer::new(channels, sample_rate_hz).expect("guarded samples are finite and rectangular");
    (buf, if total == 0 { 0.0 } else { touched as f64 / total as f64 })
}

fn default_snr_min() -> f64 {
    15.0
}
fn default_snr_max() -> f64 {
    40.0
}
fn default_semitones() -> Vec<f64> {
    vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]
}
fn default_speed_min() -> f64 {
    1.05
}
fn default_speed_max() -> f64 {
    1.3
}
fn default_low() -> f64 {
    50.0
}
fn default_high() -> f64 {
    7000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    /// Per-clip SNR drawn uniformly from `[snr_db_min, snr_db_max]`.
    Noise {
        #[serde(default = "default_snr_min")]
        snr_db_min: f64,
        #[serde(default = "default_snr_max")]
        snr_db_max: f64,
    },
    ResampleUp { target_rate_hz: u32 },
    ResampleDown { target_rate_hz: u32 },
    /// Shift drawn uniformly from `semitone_choices`.
    PitchShift {
        #[serde(default = "default_semitones")]
        semitone_choices: Vec<f64>,
    },
    /// Speed factor drawn uniformly from `[speed_min, speed_max]`.
    TimeStretch {
        #[serde(default = "default_speed_min")]
        speed_min: f64,
        #[serde(default = "default_speed_max")]
        speed_max: f64,
    },
    SpeechFilter {
        #[serde(default = "default_low")]
        low_hz: f64,
        #[serde(default = "default_high")]
        high_hz: f64,
    },
    CodecChain { steps: Vec<TranscodeStep> },
    NeuralCodec { plugin: String },
    Unaugmented,
}

impl AugmentOp {
    pub fn op_id(&self) -> &'static str {
        match self {
            AugmentOp::Noise { .. } => "noise",
            AugmentOp::ResampleUp { .. } => "resample_up",
            AugmentOp::ResampleDown { .. } => "resample_down",
            AugmentOp::PitchShift { .. } => "pitch_shift",
            AugmentOp::TimeStretch { .. } => "time_stretch",
            AugmentOp::SpeechFilter { .. } => "speech_filter",
            AugmentOp::CodecChain { .. } => "codec_chain",
            AugmentOp::NeuralCodec { .. } => "neural_codec",
            AugmentOp::Unaugmented => "unaugmented",
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, AugmentOp::Unaugmented)
    }

    pub fn needs_plugins(&self) -> bool {
        matches!(self, AugmentOp::CodecChain { .. } | AugmentOp::NeuralCodec { .. })
    }

    /// Sample rate of the output for an input at `input_rate`.
    pub fn output_rate(&self, input_rate: u32) -> u32 {
        match self {
            AugmentOp::ResampleUp { target_rate_hz } | AugmentOp::ResampleDown { target_rate_hz } => *target_rate_hz,
            AugmentOp::CodecChain { steps } => steps.iter().rev().find_map(|s| s.rate_hz).unwrap_or(input_rate),
            _ => input_rate,
        }
    }
}

/// One entry of a post-processing plan. `id` becomes the variant label of
/// every sample it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub id: String,
    #[serde(flatten)]
    pub op: AugmentOp,
}

impl AugmentationSpec {
    pub fn new(id: &str, op: AugmentOp) -> Self {
        Self { id: id.to_string(), op }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |reason: &str| Err(AugmentError::InvalidSpec { id: self.id.clone(), reason: reason.to_string() });
        match &self.op {
            AugmentOp::Noise { snr_db_min, snr_db_max } => {
                if !(snr_db_min.is_finite() && snr_db_max.is_finite() && snr_db_min <= snr_db_max) {
                    return bad("snr range must be finite with min <= max");
                }
            }
            AugmentOp::ResampleUp { target_rate_hz } | AugmentOp::ResampleDown { target_rate_hz } => {
                if *target_rate_hz < 1000 {
                    return bad("target_rate_hz must be at least 1000");
                }
            }
            AugmentOp::PitchShift { semitone_choices } => {
                if semitone_choices.is_empty() || semitone_choices.iter().any(|s| !(s.abs() <= 12.0)) {
                    return bad("semitone choices must be non-empty and within +-12");
                }
            }
            AugmentOp::TimeStretch { speed_min, speed_max } => {
                if !(0.5 <= *speed_min && speed_min <= speed_max && *speed_max <= 2.0) {
                    return bad("speed range must lie within [0.5, 2]");
                }
            }
            AugmentOp::SpeechFilter { low_hz, high_hz } => {
                if !(*low_hz > 0.0 && low_hz < high_hz) {
                    return bad("band edges must satisfy 0 < low < high");
                }
            }
            AugmentOp::CodecChain { steps } => {
                if steps.is_empty() {
                    return bad("codec chain needs at least one step");
                }
            }
            AugmentOp::NeuralCodec { plugin } => {
                if plugin.is_empty() {
                    return bad("plugin name is empty");
                }
            }
            AugmentOp::Unaugmented => {}
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct PlanFile {
    augmentation: Vec<AugmentationSpec>,
}

/// Parse a plan file: a TOML array of `[[augmentation]]` tables.
pub fn plan_from_toml(text: &str) -> Result<Vec<AugmentationSpec>, AugmentError> {
    let plan: PlanFile = toml::from_str(text).map_err(|e| AugmentError::InvalidSpec { id: "<plan>".into(), reason: e.to_string() })?;
    for s in &plan.augmentation {
        s.validate()?;
    }
    Ok(plan.augmentation)
}

fn chain(steps: &[(&str, Option<u32>, Option<u32>)]) -> AugmentOp {
    AugmentOp::CodecChain { steps: steps.iter().map(|&(p, b, r)| TranscodeStep::new(p, b, r)).collect() }
}

/// The eighteen operators of the post-processing task. The unaugmented clip
/// is retained implicitly and is not part of the plan.
pub fn default_task2_plan() -> Vec<AugmentationSpec> {
    let k16 = Some(16);
    vec![
        AugmentationSpec::new("aac_16k", chain(&[("aac", k16, None)])),
        AugmentationSpec::new("mp3_aac_16k", chain(&[("mp3", k16, None), ("aac", k16, None)])),
        AugmentationSpec::new("opus_16k", chain(&[("opus", k16, None)])),
        AugmentationSpec::new("resample_up", AugmentOp::ResampleUp { target_rate_hz: 48000 }),
        AugmentationSpec::new("time_stretch", AugmentOp::TimeStretch { speed_min: default_speed_min(), speed_max: default_speed_max() }),
        AugmentationSpec::new("encodec", AugmentOp::NeuralCodec { plugin: "encodec".into() }),
        AugmentationSpec::new("mp3_aac_mp3_16k", chain(&[("mp3", k16, None), ("aac", k16, None), ("mp3", k16, None)])),
        AugmentationSpec::new("phone_audio", chain(&[("g722", k16, Some(8000))])),
        AugmentationSpec::new("semanticodec", AugmentOp::NeuralCodec { plugin: "semanticodec".into() }),
        AugmentationSpec::new("focalcodec", AugmentOp::NeuralCodec { plugin: "focalcodec".into() }),
        AugmentationSpec::new("mp3_vbr", chain(&[("mp3_vbr", None, None)])),
        AugmentationSpec::new("pitch_shift", AugmentOp::PitchShift { semitone_choices: default_semitones() }),
        AugmentationSpec::new("snac", AugmentOp::NeuralCodec { plugin: "snac".into() }),
        AugmentationSpec::new("vorbis_16k", chain(&[("vorbis", k16, None)])),
        AugmentationSpec::new("mp3_16k", chain(&[("mp3", k16, None)])),
        AugmentationSpec::new("noise", AugmentOp::Noise { snr_db_min: default_snr_min(), snr_db_max: default_snr_max() }),
        AugmentationSpec::new("resample_down", AugmentOp::ResampleDown { target_rate_hz: 16000 }),
        AugmentationSpec::new("speech_filter", AugmentOp::SpeechFilter { low_hz: default_low(), high_hz: default_high() }),
    ]
}

/// Native operators only, for environments without transcoders.
pub fn native_task2_plan() -> Vec<AugmentationSpec> {
    default_task2_plan().into_iter().filter(|s| !s.op.needs_plugins()).collect()
}

/// What codec-backed operators need: the registry and a scratch directory
/// under which each job gets its own subdirectory.
#[derive(Debug, Clone, Default)]
pub struct AugmentContext {
    pub registry: PluginRegistry,
    pub workdir: Option<PathBuf>,
}

impl AugmentContext {
    pub fn native_only() -> Self {
        Self::default()
    }
}

fn uniform(seed: u64, label: &str, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng::stream(seed, label).random_range(lo..=hi)
    }
}

fn run_plugins(
    mono: &AudioBuffer,
    steps: &[TranscodeStep],
    ctx: &AugmentContext,
    spec_id: &str,
) -> Result<(AudioBuffer, Vec<ProvenanceStep>), AugmentError> {
    let base = ctx.workdir.clone().unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&base).map_err(|e| AugmentError::Io(e.to_string()))?;
    let job = tempfile::Builder::new()
        .prefix(&format!("job-{spec_id}-"))
        .tempdir_in(&base)
        .map_err(|e| AugmentError::Io(e.to_string()))?;
    transcode_chain(mono, steps, &ctx.registry, job.path())
}

/// Apply one plan entry. Input is downmixed to mono first; every random
/// parameter is drawn from streams keyed by `seed` and recorded.
pub fn apply_augmentation(
    spec: &AugmentationSpec,
    buf: &AudioBuffer,
    seed: u64,
    ctx: &AugmentContext,
) -> Result<(AudioBuffer, ProvenanceRecord), AugmentError> {
    spec.validate()?;
    let mut prov = ProvenanceRecord::new(spec.op.op_id(), seed).param("variant", spec.id.clone());
    if spec.op.is_identity() {
        return Ok((buf.clone(), prov));
    }
    let (mono, downmixed) = buf.downmixed();
    prov.downmixed = downmixed;
    let out = match &spec.op {
        AugmentOp::Noise { snr_db_min, snr_db_max } => {
            let snr = uniform(seed, "noise/snr", *snr_db_min, *snr_db_max);
            let (out, report) = add_noise(&mono, snr, seed)?;
            prov = prov.param("snr_db", snr).param("measured_snr_db", report.measured_snr_db);
            prov.clip_fraction = report.clip_fraction;
            out
        }
        AugmentOp::ResampleUp { target_rate_hz } | AugmentOp::ResampleDown { target_rate_hz } => {
            prov = prov.param("target_rate_hz", *target_rate_hz).param("kaiser_beta", resample::KAISER_BETA);
            resample(&mono, *target_rate_hz)
        }
        AugmentOp::PitchShift { semitone_choices } => {
            let st = semitone_choices[rng::stream(seed, "pitch/semitones").random_range(0..semitone_choices.len())];
            prov = prov.param("semitones", st);
            pitch_shift(&mono, st)?
        }
        AugmentOp::TimeStretch { speed_min, speed_max } => {
            let speed = uniform(seed, "stretch/speed", *speed_min, *speed_max);
            prov = prov.param("speed_factor", speed);
            time_stretch(&mono, speed)?
        }
        AugmentOp::SpeechFilter { low_hz, high_hz } => {
            let (out, report) = band_pass(&mono, *low_hz, *high_hz);
            prov = prov.param("low_hz", *low_hz).param("high_hz", *high_hz).param("highpass_corner_hz", report.highpass_hz);
            match report.lowpass_hz {
                Some(lp) => prov = prov.param("lowpass_corner_hz", lp),
                None => prov.notes.push("upper band edge at or above Nyquist; low-pass skipped".into()),
            }
            out
        }
        AugmentOp::CodecChain { steps } => {
            let (out, log) = run_plugins(&mono, steps, ctx, &spec.id)?;
            prov.steps = log;
            out
        }
        AugmentOp::NeuralCodec { plugin } => {
            let (out, log) = run_plugins(&mono, &[TranscodeStep::new(plugin, None, None)], ctx, &spec.id)?;
            prov.steps = log;
            out
        }
        AugmentOp::Unaugmented => unreachable!("handled above"),
    };
    let rate = out.sample_rate_hz();
    let (out, clipped) = guarded(out.into_channels(), rate);
    prov.clip_fraction = prov.clip_fraction.max(clipped);
    Ok((out, prov))
}
