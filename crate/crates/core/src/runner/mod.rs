//! Running participant detectors under the blind protocol.
//!
//! A detector is a command invoked as `<cmd...> <dataset_dir> <output_path>`
//! inside a fresh working directory, with the network denied, a wall-clock
//! budget, and a per-team daily quota. On exit 0 the submission at
//! `output_path` is parsed against the manifest.

mod quota;
mod sandbox;
mod stage;

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{Manifest, Task};
use crate::scoring::{self, DecisionRecord};

pub use quota::{check_quota, QuotaDecision, QuotaEntry, QuotaLedger};
pub use sandbox::{available_isolation, Isolation};
pub use stage::{stage_dataset, unstage, StagedDataset, LISTING};

/// Upper bound on how long after the budget a run may take to be reaped.
pub const KILL_GRACE_S: f64 = 5.0;
const POLL: Duration = Duration::from_millis(20);
const DIAGNOSTIC_LIMIT: u64 = 4096;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("audio missing for {} sample(s): {}", .0.len(), .0.join(", "))]
    MissingAudio(Vec<String>),
    #[error("staging failed: {0}")]
    Stage(String),
    #[error("quota ledger: {0}")]
    Ledger(String),
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub deny_network: bool,
    pub workdir_quota_bytes: u64,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self { deny_network: true, workdir_quota_bytes: 1 << 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub time_budget_s: f64,
    pub quota_per_day: u32,
    pub compute_profile: String,
    pub sandbox_policy: SandboxPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            time_budget_s: 10_000.0,
            quota_per_day: 5,
            compute_profile: "single T4-class GPU, 16 GB".into(),
            sandbox_policy: SandboxPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if !(self.time_budget_s.is_finite() && self.time_budget_s > 0.0) {
            return Err(RunnerError::InvalidJob("time_budget_s must be positive".into()));
        }
        if self.quota_per_day == 0 {
            return Err(RunnerError::InvalidJob("quota_per_day must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionJob {
    pub job_id: String,
    pub team_id: String,
    pub task: Task,
    pub entry_command: Vec<String>,
    /// Manifest the dataset was staged from, for the run log.
    pub dataset_ref: String,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Timeout,
    Crashed,
    QuotaRejected,
    InvalidOutput,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Timeout => "timeout",
            RunStatus::Crashed => "crashed",
            RunStatus::QuotaRejected => "quota_rejected",
            RunStatus::InvalidOutput => "invalid_output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub job_id: String,
    pub status: RunStatus,
    pub wall_time_s: f64,
    pub exit_code: Option<i32>,
    pub captured_submission: Option<PathBuf>,
    pub isolation: String,
    /// Tail of the detector's stderr plus runner notes, bounded.
    pub diagnostics: String,
    #[serde(skip)]
    pub records: Option<Vec<DecisionRecord>>,
}

fn tail(path: &Path) -> String {
    let Ok(mut f) = File::open(path) else { return String::new() };
    let len = f.metadata().map(|m| m.len()).unwrap_or(0);
    let _ = f.seek(SeekFrom::Start(len.saturating_sub(DIAGNOSTIC_LIMIT)));
    let mut buf = Vec::new();
    let _ = f.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

fn dir_size(path: &Path) -> u64 {
    std::fs::read_dir(path)
        .map(|entries| {
            entries
                .filter_map(|e| e.ok())
                .map(|e| match e.metadata() {
                    Ok(m) if m.is_dir() => dir_size(&e.path()),
                    Ok(m) => m.len(),
                    Err(_) => 0,
                })
                .sum()
        })
        .unwrap_or(0)
}

/// Run one job. `run_dir` receives `work/` (the detector's cwd and HOME),
/// `out/submission.csv`, and `stdout.log` / `stderr.log`. Every outcome is
/// reported through the returned status.
pub fn execute(job: &SubmissionJob, cfg: &RunConfig, staged: &StagedDataset, m: &Manifest, run_dir: &Path) -> RunResult {
    let mut result = RunResult {
        job_id: job.job_id.clone(),
        status: RunStatus::Crashed,
        wall_time_s: 0.0,
        exit_code: None,
        captured_submission: None,
        isolation: Isolation::Off.as_str().into(),
        diagnostics: String::new(),
        records: None,
    };
    if job.entry_command.is_empty() {
        result.diagnostics = "entry command is empty".into();
        return result;
    }
    let isolation = if cfg.sandbox_policy.deny_network { available_isolation() } else { Isolation::Off };
    result.isolation = isolation.as_str().into();
    if cfg.sandbox_policy.deny_network && isolation == Isolation::Off {
        result.diagnostics = "network isolation is unavailable on this host; allow-nothing mode refuses to launch".into();
        return result;
    }

    let work = run_dir.join("work");
    let out_dir = run_dir.join("out");
    let output = out_dir.join("submission.csv");
    let setup = (|| -> std::io::Result<(File, File)> {
        std::fs::create_dir_all(&work)?;
        std::fs::create_dir_all(&out_dir)?;
        let open = |p: PathBuf| OpenOptions::new().create(true).write(true).truncate(true).open(p);
        Ok((open(run_dir.join("stdout.log"))?, open(run_dir.join("stderr.log"))?))
    })();
    let (stdout, stderr) = match setup {
        Ok(files) => files,
        Err(e) => {
            result.diagnostics = format!("cannot prepare run directory: {e}");
            return result;
        }
    };

    let mut cmd = Command::new(&job.entry_command[0]);
    cmd.args(&job.entry_command[1..])
        .arg(&staged.dir)
        .arg(&output)
        .current_dir(&work)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("HOME", &work)
        .env("TMPDIR", &work)
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr);
    sandbox::confine(&mut cmd, isolation, cfg.sandbox_policy.workdir_quota_bytes);

    let start = Instant::now();
    let budget = Duration::from_secs_f64(cfg.time_budget_s);
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            result.diagnostics = format!("cannot launch {:?}: {e}", job.entry_command[0]);
            return result;
        }
    };
    let pgid = child.id();
    tracing::info!(job = %job.job_id, isolation = isolation.as_str(), "detector started");
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if start.elapsed() >= budget => {
                sandbox::kill_group(pgid);
                let _ = child.wait();
                break None;
            }
            Ok(None) => std::thread::sleep(POLL),
            Err(e) => {
                sandbox::kill_group(pgid);
                let _ = child.wait();
                result.diagnostics = format!("wait failed: {e}");
                break None;
            }
        }
    };
    // stragglers left in the group by the detector
    sandbox::kill_group(pgid);
    result.wall_time_s = start.elapsed().as_secs_f64();
    let mut notes = tail(&run_dir.join("stderr.log"));

    match status {
        None => {
            result.status = RunStatus::Timeout;
            if output.exists() {
                let _ = std::fs::remove_file(&output);
                notes.push_str("\n[runner] partial submission discarded after timeout");
            }
        }
        Some(s) if !s.success() => {
            result.status = RunStatus::Crashed;
            result.exit_code = s.code();
            if s.code().is_none() {
                notes.push_str("\n[runner] detector terminated by a signal");
            }
        }
        Some(s) => {
            result.exit_code = s.code();
            let used = dir_size(&work) + dir_size(&out_dir);
            if used > cfg.sandbox_policy.workdir_quota_bytes {
                result.status = RunStatus::InvalidOutput;
                notes.push_str(&format!("\n[runner] working directory quota exceeded ({used} bytes)"));
            } else if !output.is_file() {
                result.status = RunStatus::InvalidOutput;
                notes.push_str("\n[runner] no submission file written");
            } else {
                match scoring::parse_submission(&output, m) {
                    Ok(records) => {
                        result.status = RunStatus::Completed;
                        result.captured_submission = Some(output.clone());
                        result.records = Some(records);
                    }
                    Err(e) => {
                        result.status = RunStatus::InvalidOutput;
                        notes.push_str(&format!("\n[runner] {e}"));
                    }
                }
            }
        }
    }
    let mut diagnostics = std::mem::take(&mut result.diagnostics);
    if !diagnostics.is_empty() {
        diagnostics.push('\n');
    }
    diagnostics.push_str(notes.trim());
    if diagnostics.len() > 2 * DIAGNOSTIC_LIMIT as usize {
        let mut cut = diagnostics.len() - 2 * DIAGNOSTIC_LIMIT as usize;
        while !diagnostics.is_char_boundary(cut) {
            cut += 1;
        }
        diagnostics.drain(..cut);
    }
    result.diagnostics = diagnostics;
    tracing::info!(job = %job.job_id, status = result.status.as_str(), wall_s = result.wall_time_s, "detector finished");
    result
}

/// One line of the append-only run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub job: SubmissionJob,
    pub compute_profile: String,
    pub time_budget_s: f64,
    pub result: RunResult,
    pub logged_at: DateTime<Utc>,
}

pub fn append_run_log(path: &Path, entry: &RunLogEntry) -> Result<(), RunnerError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(entry).expect("log entry serializes");
    line.push('\n');
    f.write_all(line.as_bytes())?;
    Ok(())
}

/// Quota check, then execution, then a run-log line. A rejected job is
/// never launched.
pub fn submit(
    job: &SubmissionJob,
    cfg: &RunConfig,
    ledger: &QuotaLedger,
    staged: &StagedDataset,
    m: &Manifest,
    run_dir: &Path,
    run_log: Option<&Path>,
) -> Result<RunResult, RunnerError> {
    cfg.validate()?;
    if job.entry_command.is_empty() {
        return Err(RunnerError::InvalidJob("entry command is empty".into()));
    }
    let entry = QuotaEntry {
        team_id: job.team_id.clone(),
        task: job.task,
        job_id: job.job_id.clone(),
        submitted_at: job.submitted_at,
    };
    let result = match ledger.admit(entry, cfg.quota_per_day)? {
        QuotaDecision::Reject { used } => RunResult {
            job_id: job.job_id.clone(),
            status: RunStatus::QuotaRejected,
            wall_time_s: 0.0,
            exit_code: None,
            captured_submission: None,
            isolation: Isolation::Off.as_str().into(),
            diagnostics: format!("team {} already used {used} of {} runs on {} (UTC)", job.team_id, cfg.quota_per_day, job.submitted_at.date_naive()),
            records: None,
        },
        QuotaDecision::Accept => execute(job, cfg, staged, m, run_dir),
    };
    if let Some(path) = run_log {
        append_run_log(
            path,
            &RunLogEntry {
                job: job.clone(),
                compute_profile: cfg.compute_profile.clone(),
                time_budget_s: cfg.time_budget_s,
                result: result.clone(),
                logged_at: Utc::now(),
            },
        )?;
    }
    Ok(result)
}
