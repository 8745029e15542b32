//! Subcommand definitions and their implementations. Every command prints
//! one JSON document on stdout and a short human summary on stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use blindeval::audio::{read_wav, write_wav};
use blindeval::augment::{
    apply_augmentation, default_task2_plan, native_task2_plan, plan_from_toml, AugmentContext, PluginRegistry,
};
use blindeval::launder::{
    apply_launder, ingest_recordings, read_recording_manifest, techniques_from_toml, LaunderInput, LaunderOutput,
    LaunderResources,
};
use blindeval::manifest::{
    anonymize_sources, build_task1_manifest, derive_task2_manifest, derive_task3_manifest, io as mio, project_public,
    validate_manifest,
};
use blindeval::rng::derive_seed;
use blindeval::runner::{self, stage_dataset, unstage, QuotaLedger, SandboxPolicy};
use blindeval::scoring::{full_report, parse_submission};
use blindeval::{
    AnonymizationMap, AugmentationSpec, Board, Label, LaunderSpec, Manifest, ProvenanceRecord, RunConfig, RunIngest,
    RunStatus, SubmissionJob, Task,
};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{pick, require, CliConfig};
use crate::{detect, server, CliError, EXIT_CODES_HELP};

#[derive(Debug, Parser)]
#[command(name = "blindeval", version, about = "Blind evaluation of synthetic speech detectors", after_help = EXIT_CODES_HELP)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; printed to stderr when generated.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, derive, validate and project dataset manifests.
    #[command(subcommand)]
    Manifest(ManifestCmd),
    /// Render the audio of a post-processing manifest.
    #[command(subcommand)]
    Augment(AugmentCmd),
    /// Render laundered audio and ingest over-air recordings.
    #[command(subcommand)]
    Launder(LaunderCmd),
    /// Run a detector against a staged dataset.
    #[command(subcommand)]
    Run(RunCmd),
    /// Score a submission against a manifest.
    Score(ScoreArgs),
    /// Serve the leaderboard API. The operator token is read from
    /// BLINDEVAL_OPERATOR_TOKEN.
    Serve(ServeArgs),
    /// Reference detectors following the detector contract.
    #[command(subcommand)]
    Detect(DetectCmd),
}

#[derive(Debug, Subcommand)]
pub enum ManifestCmd {
    /// Select originals from `<root>/<source_id>/*.wav` trees.
    Build {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        per_source: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the public projection here.
        #[arg(long)]
        public_out: Option<PathBuf>,
    },
    /// Derive a post-processing (2) or laundering (3) manifest.
    Derive {
        #[arg(long)]
        task: Task,
        /// The unprocessed-detection manifest.
        #[arg(long)]
        from: PathBuf,
        /// Augmentation plan TOML (`[[augmentation]]` tables); defaults to
        /// the builtin 18-operator plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Use only the operators that need no transcoder plugin.
        #[arg(long, conflicts_with = "plan")]
        native: bool,
        /// Sampled originals per generated source (task 2).
        #[arg(long, alias = "clips-per-model")]
        clips: Option<usize>,
        /// Laundering techniques TOML (`[[technique]]` tables); defaults to
        /// all four techniques with builtin banks.
        #[arg(long)]
        techniques: Option<PathBuf>,
        /// Originals per technique per generated source (task 3).
        #[arg(long)]
        per_technique: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check manifest invariants; exits 3 on any violation.
    Validate {
        manifest: PathBuf,
        /// Check this file is exactly the public projection.
        #[arg(long)]
        public: Option<PathBuf>,
    },
    /// Write the public projection of a manifest.
    Public {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a salted source-to-pseudonym map.
    Anonymize {
        manifest: PathBuf,
        #[arg(long)]
        salt: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AugmentCmd {
    /// Render every derived sample of a task 2 manifest into `--out`.
    Apply {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plan TOML; must cover every variant in the manifest.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Transcoder plugin registry TOML.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Parallel workers.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LaunderCmd {
    /// Render every laundered sample of a task 3 manifest into `--out`.
    /// Non-surrogate over-air samples are exported for playback instead.
    Apply {
        #[arg(long)]
        manifest: PathBuf,
        /// The unprocessed-detection manifest holding the parents.
        #[arg(long)]
        parents: PathBuf,
        #[arg(long)]
        techniques: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Close over-air chains with physical recordings
    /// (`parent_sample_id,recorded_path,rig_notes` CSV).
    Ingest {
        /// Output directory of `launder apply`; updated in place.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        parents: PathBuf,
        #[arg(long)]
        recordings: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum RunCmd {
    /// Stage the dataset, check the quota, and run the detector as
    /// `<command...> <dataset_dir> <output_path>`.
    Submit(SubmitArgs),
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub team: String,
    /// Receives `dataset/`, `work/`, `out/` and logs; must not exist yet.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Quota ledger (JSONL).
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Append-only run log (JSONL).
    #[arg(long)]
    pub run_log: Option<PathBuf>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Runs per team per UTC day.
    #[arg(long)]
    pub quota: Option<u32>,
    /// Let the detector reach the network.
    #[arg(long)]
    pub allow_network: bool,
    #[arg(long)]
    pub job_id: Option<String>,
    /// RFC 3339 submission time; defaults to now.
    #[arg(long)]
    pub submitted_at: Option<DateTime<Utc>>,
    /// Detector command and its leading arguments.
    #[arg(last = true, required = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Private-split manifest the submission answers.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub submission: PathBuf,
    /// Public manifest; defaults to the projection of `--manifest`.
    #[arg(long)]
    pub public: Option<PathBuf>,
    /// Anonymization map JSON (from `manifest anonymize`).
    #[arg(long, conflicts_with = "salt")]
    pub anon_map: Option<PathBuf>,
    /// Salt to anonymize sources with when no map is given.
    #[arg(long)]
    pub salt: Option<String>,
    /// Private report destination (also printed).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Anonymized public report destination.
    #[arg(long)]
    pub public_out: Option<PathBuf>,
    /// Write a leaderboard ingest document (both reports) here.
    #[arg(long)]
    pub run_out: Option<PathBuf>,
    /// Append the run directly to this leaderboard event log.
    #[arg(long)]
    pub board: Option<PathBuf>,
    #[arg(long)]
    pub team: Option<String>,
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Leaderboard event log (JSONL); created if missing.
    #[arg(long)]
    pub board: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Subcommand)]
pub enum DetectCmd {
    /// Score = 1 - spectral flatness; generated when score >= 0.5.
    Flatness { dataset_dir: PathBuf, output: PathBuf },
}

fn emit<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(path)?;
    Ok(path.canonicalize()?)
}

fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    mio::load(path).map_err(|e| CliError::from(e).context(path))
}

impl CliError {
    fn context(self, path: &Path) -> Self {
        let add = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Input(m) => CliError::Input(add(m)),
            CliError::Io(m) => CliError::Io(add(m)),
            other => other,
        }
    }
}

fn summary_counts(m: &Manifest) -> serde_json::Value {
    let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &m.samples {
        *per_source.entry(s.source_id.as_str()).or_default() += 1;
    }
    serde_json::json!({
        "task": m.task,
        "split": m.split,
        "seed": m.seed,
        "sources": m.sources.len(),
        "samples": m.samples.len(),
        "real": m.count_by_label(Label::Real),
        "generated": m.count_by_label(Label::Generated),
        "per_source": per_source,
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    match cli.command {
        Command::Manifest(cmd) => manifest_cmd(cmd, &cfg, cli.seed),
        Command::Augment(AugmentCmd::Apply { manifest, out, plan, registry, jobs }) => {
            augment_apply(&cfg, cli.seed, &manifest, &out, plan.as_deref(), registry, jobs)
        }
        Command::Launder(LaunderCmd::Apply { manifest, parents, techniques, out, jobs }) => {
            launder_apply(&cfg, cli.seed, &manifest, &parents, techniques.as_deref(), &out, jobs)
        }
        Command::Launder(LaunderCmd::Ingest { dir, parents, recordings }) => launder_ingest(&dir, &parents, &recordings),
        Command::Run(RunCmd::Submit(args)) => run_submit(&cfg, args),
        Command::Score(args) => score(&cfg, args),
        Command::Serve(args) => serve(&cfg, args),
        Command::Detect(DetectCmd::Flatness { dataset_dir, output }) => {
            let n = detect::run(&dataset_dir, &output)?;
            eprintln!("scored {n} files");
            Ok(())
        }
    }
}

fn manifest_cmd(cmd: ManifestCmd, cfg: &CliConfig, seed: Option<u64>) -> Result<(), CliError> {
    match cmd {
        ManifestCmd::Build { real, generated, per_source, out, public_out } => {
            let real = require(real, cfg.paths.real.clone(), "--real")?;
            let generated = require(generated, cfg.paths.generated.clone(), "--generated")?;
            let per_source = require(per_source, cfg.defaults.per_source, "--per-source")?;
            let seed = cfg.seed(seed, None);
            let m = build_task1_manifest(&real, &generated, per_source, seed)?;
            mio::save(&m, &out)?;
            if let Some(p) = public_out {
                mio::save(&project_public(&m), &p)?;
            }
            eprintln!(
                "task1: {} sources, {} samples ({} real, {} generated), {per_source} per source",
                m.sources.len(),
                m.samples.len(),
                m.count_by_label(Label::Real),
                m.count_by_label(Label::Generated)
            );
            emit(&summary_counts(&m))
        }
        ManifestCmd::Derive { task, from, plan, native, clips, techniques, per_technique, out } => {
            let task1 = load_manifest(&from)?;
            let seed = cfg.seed(seed, Some(task1.seed));
            let m = match task {
                Task::Task1 => return Err(CliError::Usage("derive targets task 2 or 3".into())),
                Task::Task2 => {
                    let plan = match plan {
                        Some(p) => plan_from_toml(&read_text(&p)?)?,
                        None if native => native_task2_plan(),
                        None => default_task2_plan(),
                    };
                    let clips = pick(clips, cfg.defaults.clips_per_model, 20);
                    let m = derive_task2_manifest(&task1, &plan, clips, seed)?;
                    eprintln!(
                        "task2: {} samples per generated source ({clips} clips x {} variants incl. unaugmented)",
                        clips * (plan.len() + 1),
                        plan.len() + 1
                    );
                    m
                }
                Task::Task3 => {
                    let specs = match techniques {
                        Some(p) => techniques_from_toml(&read_text(&p)?)?,
                        None => LaunderSpec::all_default(),
                    };
                    let n = pick(per_technique, cfg.defaults.per_technique, 50);
                    let m = derive_task3_manifest(&task1, &specs, n, seed)?;
                    eprintln!(
                        "task3: {} samples per generated source ({n} clips x {} techniques)",
                        n * specs.len(),
                        specs.len()
                    );
                    m
                }
            };
            mio::save(&m, &out)?;
            emit(&summary_counts(&m))
        }
        ManifestCmd::Validate { manifest, public } => {
            let m = load_manifest(&manifest)?;
            let public = public.map(|p| load_manifest(&p)).transpose()?;
            let report = validate_manifest(&m, public.as_ref());
            emit(&serde_json::json!({ "valid": report.is_valid(), "violations": report.violations }))?;
            for v in &report.violations {
                eprintln!("violation: {v}");
            }
            if report.is_valid() {
                eprintln!("{}: valid ({} samples)", manifest.display(), m.samples.len());
                Ok(())
            } else {
                Err(CliError::Input(format!("{} violation(s)", report.violations.len())))
            }
        }
        ManifestCmd::Public { manifest, out } => {
            let p = project_public(&load_manifest(&manifest)?);
            mio::save(&p, &out)?;
            eprintln!("public projection: {} sources, {} samples", p.sources.len(), p.samples.len());
            emit(&summary_counts(&p))
        }
        ManifestCmd::Anonymize { manifest, salt, out } => {
            let map = anonymize_sources(&load_manifest(&manifest)?, salt.as_bytes());
            let text = serde_json::to_string_pretty(&map).map_err(|e| CliError::Internal(e.to_string()))?;
            write_text(&out, &text)?;
            eprintln!("{} pseudonyms written to {}", map.entries.len(), out.display());
            emit(&serde_json::json!({ "sources": map.entries.len(), "out": out }))
        }
    }
}

#[derive(Serialize)]
struct ProvenanceLine<'a> {
    sample_id: &'a str,
    parent_sample_id: Option<&'a str>,
    variant: &'a str,
    provenance: &'a ProvenanceRecord,
}

struct Rendered {
    sample_id: String,
    provenance: ProvenanceRecord,
    duration_s: f64,
    sample_rate_hz: u32,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| CliError::Internal(e.to_string()))
}

fn parent_audio(parents: &Manifest, parent_id: &str) -> Result<blindeval::AudioBuffer, CliError> {
    let parent = parents.sample(parent_id).ok_or_else(|| CliError::Input(format!("unknown parent {parent_id}")))?;
    let path = parents.resolve(parent).ok_or_else(|| CliError::Input(format!("no audio root for {parent_id}")))?;
    read_wav(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn save_wav(path: &Path, buf: &blindeval::AudioBuffer) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_wav(path, buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Record actual durations and rates, point the derived root at `out`, and
/// write `manifest.jsonl` plus `provenance.jsonl`.
fn finish_render(m: &mut Manifest, out: &Path, rendered: &[Rendered]) -> Result<(), CliError> {
    let by_id: BTreeMap<&str, &Rendered> = rendered.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    for s in m.samples.iter_mut() {
        if let Some(r) = by_id.get(s.sample_id.as_str()) {
            s.duration_s = r.duration_s;
            s.sample_rate_hz = r.sample_rate_hz;
        }
    }
    m.roots.derived = Some(out.to_path_buf());
    mio::save(m, &out.join("manifest.jsonl"))?;
    let mut lines = String::new();
    for s in &m.samples {
        if let Some(r) = by_id.get(s.sample_id.as_str()) {
            let line = ProvenanceLine {
                sample_id: &s.sample_id,
                parent_sample_id: s.parent_sample_id.as_deref(),
                variant: s.variant.as_str(),
                provenance: &r.provenance,
            };
            lines.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Internal(e.to_string()))?);
            lines.push('\n');
        }
    }
    write_text(&out.join("provenance.jsonl"), &lines)
}

fn augment_apply(
    cfg: &CliConfig,
    seed: Option<u64>,
    manifest: &Path,
    out: &Path,
    plan: Option<&Path>,
    registry: Option<PathBuf>,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let mut m = load_manifest(manifest)?;
    if m.task != Task::Task2 {
        return Err(CliError::Input(format!("expected a task2 manifest, got {}", m.task)));
    }
    let seed = cfg.seed(seed, Some(m.seed));
    let plan: Vec<AugmentationSpec> = match plan {
        Some(p) => plan_from_toml(&read_text(p)?)?,
        None => default_task2_plan(),
    };
    let plan: BTreeMap<&str, &AugmentationSpec> = plan.iter().map(|s| (s.id.as_str(), s)).collect();
    let registry = match registry.or_else(|| cfg.paths.registry.clone()) {
        Some(p) => PluginRegistry::load(&p)?,
        None => PluginRegistry::default(),
    };
    let out = absolute(out)?;
    let scratch = out.join(".scratch");
    let ctx = AugmentContext { registry, workdir: Some(scratch.clone()) };

    let derived: Vec<_> = m.samples.iter().filter(|s| !s.variant.is_original()).cloned().collect();
    for s in &derived {
        if !plan.contains_key(s.variant.as_str()) {
            return Err(CliError::Input(format!("variant {} of {} is not in the plan", s.variant, s.sample_id)));
        }
    }
    let jobs = pick(jobs, cfg.defaults.jobs, 1);
    let rendered: Result<Vec<Rendered>, CliError> = pool(jobs)?.install(|| {
        derived
            .par_iter()
            .map(|s| {
                let parent_id = s.parent_sample_id.as_deref().unwrap_or_default();
                let buf = parent_audio(&m, parent_id)?;
                let spec = plan[s.variant.as_str()];
                let (audio, provenance) = apply_augmentation(spec, &buf, derive_seed(seed, &s.sample_id), &ctx)?;
                save_wav(&blindeval::manifest::join_relative(&out, &s.file_path), &audio)?;
                Ok(Rendered {
                    sample_id: s.sample_id.clone(),
                    provenance,
                    duration_s: audio.duration_s(),
                    sample_rate_hz: audio.sample_rate_hz(),
                })
            })
            .collect()
    });
    let _ = std::fs::remove_dir_all(&scratch);
    let rendered = rendered?;
    m.seed = seed;
    finish_render(&mut m, &out, &rendered)?;
    eprintln!("augmented {} samples into {} with {jobs} worker(s)", rendered.len(), out.display());
    emit(&serde_json::json!({ "rendered": rendered.len(), "seed": seed, "manifest": out.join("manifest.jsonl") }))
}

#[derive(Serialize)]
struct PlaybackRow {
    sample_id: String,
    parent_sample_id: String,
    technique: String,
    playback_path: String,
}

fn launder_apply(
    cfg: &CliConfig,
    seed: Option<u64>,
    manifest: &Path,
    parents: &Path,
    techniques: Option<&Path>,
    out: &Path,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let mut m = load_manifest(manifest)?;
    if m.task != Task::Task3 {
        return Err(CliError::Input(format!("expected a task3 manifest, got {}", m.task)));
    }
    let parents = load_manifest(parents)?;
    let seed = cfg.seed(seed, Some(m.seed));
    let specs = match techniques {
        Some(p) => techniques_from_toml(&read_text(p)?)?,
        None => LaunderSpec::all_default(),
    };
    let resources = LaunderResources::for_specs(&specs)?;
    let by_variant: BTreeMap<&str, &LaunderSpec> = specs.iter().map(|s| (s.variant_id(), s)).collect();
    let out = absolute(out)?;
    let derived: Vec<_> = m.samples.iter().filter(|s| !s.variant.is_original()).cloned().collect();
    for s in &derived {
        if !by_variant.contains_key(s.variant.as_str()) {
            return Err(CliError::Input(format!("technique {} of {} is not configured", s.variant, s.sample_id)));
        }
    }
    let jobs = pick(jobs, cfg.defaults.jobs, 1);
    let results: Result<Vec<(Rendered, Option<PlaybackRow>)>, CliError> = pool(jobs)?.install(|| {
        derived
            .par_iter()
            .map(|s| {
                let parent_id = s.parent_sample_id.as_deref().unwrap_or_default();
                let buf = parent_audio(&parents, parent_id)?;
                let spec = by_variant[s.variant.as_str()];
                let (output, provenance) =
                    apply_launder(spec, LaunderInput::Audio(&buf), derive_seed(seed, &s.sample_id), &resources)?;
                let (audio, playback) = match output {
                    LaunderOutput::Audio(a) => {
                        save_wav(&blindeval::manifest::join_relative(&out, &s.file_path), &a)?;
                        (a, None)
                    }
                    LaunderOutput::AwaitingPlayback(a) => {
                        let rel = format!("playback/{}.wav", s.sample_id);
                        save_wav(&out.join(&rel), &a)?;
                        let row = PlaybackRow {
                            sample_id: s.sample_id.clone(),
                            parent_sample_id: parent_id.to_string(),
                            technique: spec.technique.as_str().into(),
                            playback_path: rel,
                        };
                        (a, Some(row))
                    }
                    LaunderOutput::Recorded(_) => unreachable!("audio input never yields a recording"),
                };
                let r = Rendered {
                    sample_id: s.sample_id.clone(),
                    provenance,
                    duration_s: audio.duration_s(),
                    sample_rate_hz: audio.sample_rate_hz(),
                };
                Ok((r, playback))
            })
            .collect()
    });
    let (rendered, playback): (Vec<Rendered>, Vec<Option<PlaybackRow>>) = results?.into_iter().unzip();
    let playback: Vec<PlaybackRow> = playback.into_iter().flatten().collect();
    if !playback.is_empty() {
        let mut w = csv::Writer::from_path(out.join("playback.csv")).map_err(|e| CliError::Io(e.to_string()))?;
        for row in &playback {
            w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    m.seed = seed;
    finish_render(&mut m, &out, &rendered)?;
    eprintln!(
        "laundered {} samples into {}; {} awaiting playback",
        rendered.len() - playback.len(),
        out.display(),
        playback.len()
    );
    emit(&serde_json::json!({
        "rendered": rendered.len() - playback.len(),
        "awaiting_playback": playback.len(),
        "seed": seed,
        "manifest": out.join("manifest.jsonl"),
    }))
}

fn launder_ingest(dir: &Path, parents: &Path, recordings: &Path) -> Result<(), CliError> {
    let dir = dir.canonicalize()?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut m = load_manifest(&manifest_path)?;
    let parents = load_manifest(parents)?;
    let rows = read_recording_manifest(recordings)?;
    let n = ingest_recordings(&mut m, &parents, &rows, &dir)?;
    m.roots.derived = Some(dir.clone());
    mio::save(&m, &manifest_path)?;
    eprintln!("ingested {n} recordings into {}", dir.display());
    emit(&serde_json::json!({ "ingested": n, "manifest": manifest_path }))
}

fn run_submit(cfg: &CliConfig, args: SubmitArgs) -> Result<(), CliError> {
    let m = load_manifest(&args.manifest)?;
    let ledger = require(args.ledger, cfg.paths.ledger.clone(), "--ledger")?;
    let run_log = args.run_log.or_else(|| cfg.paths.run_log.clone());
    if args.run_dir.exists() && std::fs::read_dir(&args.run_dir)?.next().is_some() {
        return Err(CliError::Usage(format!("run directory {} is not empty", args.run_dir.display())));
    }
    let run_dir = absolute(&args.run_dir)?;
    let submitted_at = args.submitted_at.unwrap_or_else(Utc::now);
    let job = SubmissionJob {
        job_id: args.job_id.unwrap_or_else(|| format!("{}-{}", args.team, submitted_at.format("%Y%m%dT%H%M%S%.3fZ"))),
        team_id: args.team,
        task: m.task,
        entry_command: args.command,
        dataset_ref: args.manifest.display().to_string(),
        submitted_at,
    };
    let defaults = RunConfig::default();
    let run_cfg = RunConfig {
        time_budget_s: pick(args.budget, cfg.defaults.time_budget_s, defaults.time_budget_s),
        quota_per_day: pick(args.quota, cfg.defaults.quota_per_day, defaults.quota_per_day),
        sandbox_policy: SandboxPolicy { deny_network: !args.allow_network, ..SandboxPolicy::default() },
        ..defaults
    };
    let staged = stage_dataset(&m, &run_dir.join("dataset"))?;
    let result = runner::submit(&job, &run_cfg, &QuotaLedger::new(ledger), &staged, &m, &run_dir, run_log.as_deref());
    unstage(&staged)?;
    let result = result?;
    emit(&result)?;
    eprintln!(
        "job {}: {} after {:.2}s (isolation {})",
        result.job_id,
        result.status.as_str(),
        result.wall_time_s,
        result.isolation
    );
    match result.status {
        RunStatus::Completed => Ok(()),
        status => Err(CliError::Run { status, diagnostics: result.diagnostics }),
    }
}

fn score(cfg: &CliConfig, args: ScoreArgs) -> Result<(), CliError> {
    let m = load_manifest(&args.manifest)?;
    let records = parse_submission(&args.submission, &m)?;
    let private = full_report(&records, &m, None)?;
    if let Some(p) = &args.out {
        write_text(p, &private.to_json())?;
    }
    let wants_public = args.public_out.is_some() || args.run_out.is_some() || args.board.is_some();
    if wants_public {
        let anon: AnonymizationMap = match (&args.anon_map, &args.salt) {
            (Some(p), _) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
            (None, Some(salt)) => anonymize_sources(&m, salt.as_bytes()),
            (None, None) => return Err(CliError::Usage("public reports need --anon-map or --salt".into())),
        };
        let public_m = match &args.public {
            Some(p) => load_manifest(p)?,
            None => project_public(&m),
        };
        let public = full_report(&records, &public_m, Some(&anon))?;
        if let Some(p) = &args.public_out {
            write_text(p, &public.to_json())?;
        }
        if args.run_out.is_some() || args.board.is_some() {
            let team_id = require(args.team.clone(), None, "--team")?;
            let timestamp = args.timestamp.unwrap_or_else(Utc::now);
            let run = RunIngest {
                idempotency_key: args.key.clone().unwrap_or_else(|| format!("{team_id}-{}", timestamp.to_rfc3339())),
                team_id,
                task: m.task,
                timestamp,
                public,
                private: private.clone(),
            };
            if let Some(p) = &args.run_out {
                write_text(p, &serde_json::to_string_pretty(&run).map_err(|e| CliError::Internal(e.to_string()))?)?;
            }
            if let Some(p) = args.board.as_ref().or(cfg.paths.board.as_ref()) {
                let ack = Board::open(p)?.ingest(run)?;
                eprintln!("ingested into {} (sequence {})", p.display(), ack.sequence);
            }
        }
    }
    eprintln!(
        "BAC {:.4} (TPR {:.4}, TNR {:.4}), AUC {:.4}, EER {:.4} on {} samples",
        private.overall.bac,
        private.overall.tpr,
        private.overall.tnr,
        private.auc,
        private.eer,
        records.len()
    );
    println!("{}", private.to_json());
    Ok(())
}

fn serve(cfg: &CliConfig, args: ServeArgs) -> Result<(), CliError> {
    let board = match args.board.or_else(|| cfg.paths.board.clone()) {
        Some(p) => Board::open(&p)?,
        None => Board::in_memory(),
    };
    let token = std::env::var(server::TOKEN_ENV).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        tracing::warn!("{} is unset; operator endpoints are disabled", server::TOKEN_ENV);
    }
    let state = std::sync::Arc::new(server::AppState { board, token });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Server(e.to_string()))?;
    rt.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(&args.addr).await.map_err(|e| CliError::Server(format!("{}: {e}", args.addr)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Server(e.to_string()))?;
        println!("listening on http://{addr}");
        eprintln!("serving leaderboard on http://{addr}");
        server::serve(listener, state).await.map_err(|e| CliError::Server(e.to_string()))
    })
}
