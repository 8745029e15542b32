//! Append-only quota ledger. Days are UTC calendar days.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::manifest::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaEntry {
    pub team_id: String,
    pub task: Task,
    pub job_id: String,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotaDecision {
    Accept,
    Reject { used: u32 },
}

/// Decide against already-accepted entries: reject when the team has
/// `quota_per_day` accepted jobs on the UTC day of `submitted_at`.
pub fn check_quota(team_id: &str, submitted_at: DateTime<Utc>, entries: &[QuotaEntry], quota_per_day: u32) -> QuotaDecision {
    let day = submitted_at.date_naive();
    let used = entries.iter().filter(|e| e.team_id == team_id && e.submitted_at.date_naive() == day).count() as u32;
    if used >= quota_per_day {
        QuotaDecision::Reject { used }
    } else {
        QuotaDecision::Accept
    }
}

/// JSON-lines file of accepted jobs. `admit` checks and appends under an
/// exclusive file lock, so concurrent workers serialize on it.
#[derive(Debug, Clone)]
pub struct QuotaLedger {
    path: PathBuf,
}

struct Locked(File);

impl Locked {
    fn open(path: &Path) -> Result<Self, RunnerError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        // SAFETY: flock on a descriptor we own.
        if unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) } != 0 {
            return Err(std::io::Error::last_os_error().into());
        }
        Ok(Locked(file))
    }
}

impl Drop for Locked {
    fn drop(&mut self) {
        // SAFETY: unlocking the descriptor locked in `open`.
        unsafe { libc::flock(self.0.as_raw_fd(), libc::LOCK_UN) };
    }
}

fn read_entries(file: &File) -> Result<Vec<QuotaEntry>, RunnerError> {
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(&line).map_err(|e| RunnerError::Ledger(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(entries)
}

impl QuotaLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> Result<Vec<QuotaEntry>, RunnerError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let lock = Locked::open(&self.path)?;
        read_entries(&lock.0)
    }

    pub fn admit(&self, entry: QuotaEntry, quota_per_day: u32) -> Result<QuotaDecision, RunnerError> {
        let mut lock = Locked::open(&self.path)?;
        let entries = read_entries(&lock.0)?;
        let decision = check_quota(&entry.team_id, entry.submitted_at, &entries, quota_per_day);
        if decision == QuotaDecision::Accept {
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            lock.0.write_all(line.as_bytes())?;
            lock.0.sync_data()?;
        }
        Ok(decision)
    }
}
