//! External transcoder plugins.
//!
//! Codecs are never implemented here. A registry file maps plugin names to
//! command templates:
//!
//! ```toml
//! [plugins.mp3]
//! encode = ["ffmpeg", "-y", "-i", "{input}", "-b:a", "{bitrate}", "{output}"]
//! decode = ["ffmpeg", "-y", "-i", "{input}", "-ar", "{rate}", "{output}"]
//! output = "mp3"
//! ```
//!
//! Placeholders: `{input}`, `{output}`, `{bitrate}` (e.g. `16k`),
//! `{bitrate_kbps}` (e.g. `16`) and `{rate}` (Hz). A plugin without `decode`
//! must write WAV directly. Step `i` of a job writes `<job>/<i>.<output>`
//! and, when decoding, `<job>/<i>.wav`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::resample::resample;
use super::AugmentError;
use crate::audio::{self, AudioBuffer};
use crate::provenance::ProvenanceStep;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscoderPlugin {
    #[serde(skip)]
    pub name: String,
    #[serde(rename = "encode")]
    pub command_template: Vec<String>,
    #[serde(default)]
    pub decode: Option<Vec<String>>,
    #[serde(rename = "output")]
    pub declared_output: String,
}

impl TranscoderPlugin {
    fn check(&self) -> Result<(), String> {
        let has = |t: &[String], p: &str| t.iter().any(|a| a.contains(p));
        for (label, t) in std::iter::once(("encode", &self.command_template)).chain(self.decode.iter().map(|d| ("decode", d))) {
            if t.is_empty() {
                return Err(format!("{label} template is empty"));
            }
            if !has(t, "{input}") || !has(t, "{output}") {
                return Err(format!("{label} template must contain {{input}} and {{output}}"));
            }
        }
        if self.decode.is_none() && !self.declared_output.eq_ignore_ascii_case("wav") {
            return Err("plugins without a decode template must output wav".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PluginRegistry {
    #[serde(default)]
    pub plugins: BTreeMap<String, TranscoderPlugin>,
}

impl PluginRegistry {
    pub fn from_toml(text: &str) -> Result<Self, AugmentError> {
        let mut reg: PluginRegistry = toml::from_str(text).map_err(|e| AugmentError::Registry(e.to_string()))?;
        for (name, p) in reg.plugins.iter_mut() {
            p.name = name.clone();
            p.check().map_err(|e| AugmentError::Registry(format!("plugin {name}: {e}")))?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AugmentError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn get(&self, name: &str) -> Option<&TranscoderPlugin> {
        self.plugins.get(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscodeStep {
    pub plugin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitrate_kbps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_hz: Option<u32>,
}

impl TranscodeStep {
    pub fn new(plugin: &str, bitrate_kbps: Option<u32>, rate_hz: Option<u32>) -> Self {
        Self { plugin: plugin.to_string(), bitrate_kbps, rate_hz }
    }
}

const DIAGNOSTIC_LIMIT: usize = 4096;

fn expand(template: &[String], vars: &[(&str, Option<String>)], step: usize) -> Result<Vec<String>, AugmentError> {
    template
        .iter()
        .map(|arg| {
            let mut out = arg.clone();
            for (key, value) in vars {
                let needle = format!("{{{key}}}");
                if out.contains(&needle) {
                    let v = value.as_ref().ok_or_else(|| AugmentError::PluginFailed {
                        step,
                        status: None,
                        diagnostics: format!("template needs {needle} but the step does not set it"),
                    })?;
                    out = out.replace(&needle, v);
                }
            }
            Ok(out)
        })
        .collect()
}

fn run_template(argv: &[String], workdir: &Path, plugin: &str, step: usize) -> Result<(), AugmentError> {
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .current_dir(workdir)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("HOME", workdir)
        .stdin(Stdio::null());
    let out = cmd.output().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            AugmentError::PluginMissing(plugin.to_string())
        } else {
            AugmentError::PluginFailed { step, status: None, diagnostics: e.to_string() }
        }
    })?;
    if !out.status.success() {
        let mut diagnostics = String::from_utf8_lossy(&out.stderr).into_owned();
        diagnostics.truncate(DIAGNOSTIC_LIMIT);
        return Err(AugmentError::PluginFailed { step, status: out.status.code(), diagnostics });
    }
    Ok(())
}

/// Round-trip `buf` through each codec step in order inside `workdir`.
/// When a step declares a rate and the decoded audio differs, it is
/// resampled natively so the output rate always equals the last declared
/// rate.
pub fn transcode_chain(
    buf: &AudioBuffer,
    steps: &[TranscodeStep],
    registry: &PluginRegistry,
    workdir: &Path,
) -> Result<(AudioBuffer, Vec<ProvenanceStep>), AugmentError> {
    if steps.is_empty() {
        return Err(AugmentError::EmptyChain);
    }
    let plugins: Vec<&TranscoderPlugin> = steps
        .iter()
        .map(|s| registry.get(&s.plugin).ok_or_else(|| AugmentError::PluginMissing(s.plugin.clone())))
        .collect::<Result<_, _>>()?;
    std::fs::create_dir_all(workdir).map_err(|e| AugmentError::Io(e.to_string()))?;

    let mut input: PathBuf = workdir.join("input.wav");
    audio::write_wav(&input, buf).map_err(|e| AugmentError::Io(e.to_string()))?;
    let mut current = buf.clone();
    let mut log = Vec::with_capacity(steps.len());
    for (i, (step, plugin)) in steps.iter().zip(plugins).enumerate() {
        let encoded = workdir.join(format!("{i}.{}", plugin.declared_output));
        let vars = [
            ("input", Some(input.display().to_string())),
            ("output", Some(encoded.display().to_string())),
            ("bitrate", step.bitrate_kbps.map(|b| format!("{b}k"))),
            ("bitrate_kbps", step.bitrate_kbps.map(|b| b.to_string())),
            ("rate", step.rate_hz.map(|r| r.to_string())),
        ];
        run_template(&expand(&plugin.command_template, &vars, i)?, workdir, &plugin.name, i)?;
        let decoded = match &plugin.decode {
            Some(template) => {
                let wav = workdir.join(format!("{i}.wav"));
                let vars = [
                    ("input", Some(encoded.display().to_string())),
                    ("output", Some(wav.display().to_string())),
                    ("bitrate", step.bitrate_kbps.map(|b| format!("{b}k"))),
                    ("bitrate_kbps", step.bitrate_kbps.map(|b| b.to_string())),
                    ("rate", step.rate_hz.map(|r| r.to_string())),
                ];
                run_template(&expand(template, &vars, i)?, workdir, &plugin.name, i)?;
                wav
            }
            None => encoded.clone(),
        };
        current = audio::read_wav(&decoded).map_err(|e| AugmentError::DecodeFailed { step: i, reason: e.to_string() })?;
        let mut entry = ProvenanceStep::new(format!("transcode:{}", plugin.name))
            .with("codec", plugin.declared_output.clone())
            .with("decoded_rate_hz", current.sample_rate_hz());
        if let Some(b) = step.bitrate_kbps {
            entry = entry.with("bitrate_kbps", b);
        }
        if let Some(rate) = step.rate_hz {
            entry = entry.with("rate_hz", rate);
            if current.sample_rate_hz() != rate {
                current = resample(&current, rate);
                entry = entry.with("native_resample", true);
            }
        }
        log.push(entry);
        input = decoded;
    }
    Ok((current, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_registry() -> PluginRegistry {
        PluginRegistry::from_toml(
            r#"
            [plugins.pcm]
            encode = ["cp", "{input}", "{output}"]
            output = "wav"

            [plugins.twostage]
            encode = ["cp", "{input}", "{output}"]
            decode = ["cp", "{input}", "{output}"]
            output = "bin"

            [plugins.broken]
            encode = ["sh", "-c", "echo codec exploded >&2; exit 3", "{input}", "{output}"]
            output = "wav"

            [plugins.absent]
            encode = ["definitely-not-a-real-binary-xyz", "{input}", "{output}"]
            output = "wav"
            "#,
        )
        .unwrap()
    }

    fn buf() -> AudioBuffer {
        AudioBuffer::mono(crate::audio::sine(440.0, 0.3, 0.2, 16000), 16000).unwrap()
    }

    #[test]
    fn lossless_plugin_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let steps = [TranscodeStep::new("pcm", None, None), TranscodeStep::new("twostage", Some(16), None)];
        let (out, log) = transcode_chain(&buf(), &steps, &identity_registry(), dir.path()).unwrap();
        assert_eq!(out, buf());
        assert_eq!(log.len(), 2);
        assert!(dir.path().join("0.wav").exists());
        assert!(dir.path().join("1.bin").exists() && dir.path().join("1.wav").exists());
    }

    #[test]
    fn output_rate_follows_last_step() {
        let dir = tempfile::tempdir().unwrap();
        let steps = [TranscodeStep::new("pcm", Some(16), Some(16000)), TranscodeStep::new("pcm", Some(16), Some(8000))];
        let (out, log) = transcode_chain(&buf(), &steps, &identity_registry(), dir.path()).unwrap();
        assert_eq!(out.sample_rate_hz(), 8000);
        assert_eq!(log[1].params["native_resample"], serde_json::json!(true));
    }

    #[test]
    fn failures_are_typed() {
        let dir = tempfile::tempdir().unwrap();
        let reg = identity_registry();
        assert!(matches!(transcode_chain(&buf(), &[], &reg, dir.path()), Err(AugmentError::EmptyChain)));
        assert!(matches!(
            transcode_chain(&buf(), &[TranscodeStep::new("nope", None, None)], &reg, dir.path()),
            Err(AugmentError::PluginMissing(_))
        ));
        assert!(matches!(
            transcode_chain(&buf(), &[TranscodeStep::new("absent", None, None)], &reg, dir.path()),
            Err(AugmentError::PluginMissing(_))
        ));
        match transcode_chain(&buf(), &[TranscodeStep::new("broken", None, None)], &reg, dir.path()) {
            Err(AugmentError::PluginFailed { step: 0, status: Some(3), diagnostics }) => {
                assert!(diagnostics.contains("codec exploded"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn registry_rejects_templates_without_placeholders() {
        let err = PluginRegistry::from_toml("[plugins.x]\nencode = [\"cp\", \"a\", \"{output}\"]\noutput = \"wav\"\n");
        assert!(matches!(err, Err(AugmentError::Registry(_))));
        let err = PluginRegistry::from_toml("[plugins.x]\nencode = [\"cp\", \"{input}\", \"{output}\"]\noutput = \"mp3\"\n");
        assert!(matches!(err, Err(AugmentError::Registry(_))));
    }
}
