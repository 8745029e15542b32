//! Leaderboard store: an append-only event log of scored runs with derived
//! views rebuilt on every write and published as immutable snapshots.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{AnonymizationMap, Split, Task};
use crate::scoring::{MetricsReport, RocCurve, RocPoint};

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("run {0:?} was already ingested")]
    DuplicateRun(String),
    #[error("unknown team {0}")]
    UnknownTeam(String),
    #[error("no scored runs for team {team} on {task}")]
    ScoresUnavailable { team: String, task: Task },
    #[error("ROC curves are hidden on the public view while the round is active")]
    RocHidden,
    #[error("timestamp {at} does not follow the previous run of {team} on {task}")]
    NonMonotonicTimestamp { team: String, task: Task, at: DateTime<Utc> },
    #[error("rejected report: {0}")]
    InvalidReport(String),
    #[error("event log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Public,
    Private,
}

impl std::str::FromStr for View {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "public" => Ok(View::Public),
            "private" => Ok(View::Private),
            other => Err(format!("unknown view {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIngest {
    pub team_id: String,
    pub task: Task,
    pub idempotency_key: String,
    pub timestamp: DateTime<Utc>,
    pub public: MetricsReport,
    pub private: MetricsReport,
}

impl RunIngest {
    fn report(&self, view: View) -> &MetricsReport {
        match view {
            View::Public => &self.public,
            View::Private => &self.private,
        }
    }

    /// Public reports must be anonymized public-split reports; private
    /// reports must cover the private split.
    pub fn validate(&self) -> Result<(), BoardError> {
        let bad = |why: String| Err(BoardError::InvalidReport(why));
        if self.team_id.is_empty() || self.idempotency_key.is_empty() {
            return bad("team_id and idempotency_key are required".into());
        }
        for (view, r) in [(View::Public, &self.public), (View::Private, &self.private)] {
            if r.task != self.task {
                return bad(format!("{view:?} report is for {}, run is for {}", r.task, self.task));
            }
            let rates = [r.overall.tpr, r.overall.tnr, r.overall.bac];
            if rates.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("{view:?} report has rates outside [0, 1]"));
            }
        }
        if self.public.split != Split::Public || !self.public.anonymized {
            return bad("public report must be an anonymized public-split report".into());
        }
        let keys = self.public.per_generated_source.keys().chain(self.public.per_real_source.keys());
        if let Some(k) = keys.into_iter().find(|k| !AnonymizationMap::is_pseudonym(k)) {
            return bad(format!("public report key {k:?} is not a pseudonym"));
        }
        if self.private.split != Split::Private {
            return bad("private report must cover the private split".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BoardEvent {
    RunIngested(RunIngest),
    RoundState { active: bool, at: DateTime<Utc> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub team_id: String,
    pub task: Task,
    pub best_bac: f64,
    pub best_tpr: f64,
    pub best_tnr: f64,
    pub best_achieved_at: DateTime<Utc>,
    pub latest_bac: f64,
    pub submission_count: usize,
    /// Conditioned BAC of the best run, keyed by pseudonym on the public
    /// view and by source id on the private view.
    pub per_source: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionHistoryPoint {
    pub team_id: String,
    pub task: Task,
    pub timestamp: DateTime<Utc>,
    pub bac: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocView {
    pub team_id: String,
    pub task: Task,
    pub view: View,
    pub curve: RocCurve,
    pub auc: f64,
    pub eer: f64,
    /// `(fpr, tpr)` of the submitted decisions.
    pub operating_point: RocPoint,
}

/// Immutable state published to readers.
#[derive(Debug, Default)]
pub struct Snapshot {
    runs: Vec<RunIngest>,
    keys: HashSet<String>,
    round_active: bool,
    boards: BTreeMap<(Task, View), Vec<LeaderboardEntry>>,
}

fn best_run<'a>(runs: impl Iterator<Item = &'a RunIngest>, view: View) -> Option<&'a RunIngest> {
    // strict improvement only, so ties keep the earliest achiever
    runs.fold(None, |best: Option<&RunIngest>, r| match best {
        Some(b) if r.report(view).overall.bac <= b.report(view).overall.bac => Some(b),
        _ => Some(r),
    })
}

impl Snapshot {
    fn apply(&mut self, event: &BoardEvent) {
        match event {
            BoardEvent::RunIngested(run) => {
                self.keys.insert(run.idempotency_key.clone());
                self.runs.push(run.clone());
            }
            BoardEvent::RoundState { active, .. } => self.round_active = *active,
        }
    }

    fn rebuild(&mut self) {
        let mut boards = BTreeMap::new();
        let tasks: std::collections::BTreeSet<Task> = self.runs.iter().map(|r| r.task).collect();
        for task in tasks {
            let teams: std::collections::BTreeSet<&str> =
                self.runs.iter().filter(|r| r.task == task).map(|r| r.team_id.as_str()).collect();
            for view in [View::Public, View::Private] {
                let mut entries: Vec<LeaderboardEntry> = teams
                    .iter()
                    .map(|team| {
                        let runs = || self.runs.iter().filter(move |r| r.task == task && r.team_id == *team);
                        let best = best_run(runs(), view).expect("team has runs");
                        let latest = runs().last().expect("team has runs");
                        let report = best.report(view);
                        let per_source = report
                            .per_generated_source
                            .iter()
                            .chain(&report.per_real_source)
                            .map(|(k, v)| (k.clone(), *v))
                            .collect();
                        LeaderboardEntry {
                            rank: 0,
                            team_id: team.to_string(),
                            task,
                            best_bac: report.overall.bac,
                            best_tpr: report.overall.tpr,
                            best_tnr: report.overall.tnr,
                            best_achieved_at: best.timestamp,
                            latest_bac: latest.report(view).overall.bac,
                            submission_count: runs().count(),
                            per_source,
                        }
                    })
                    .collect();
                entries.sort_by(|a, b| {
                    b.best_bac
                        .total_cmp(&a.best_bac)
                        .then(a.best_achieved_at.cmp(&b.best_achieved_at))
                        .then(a.team_id.cmp(&b.team_id))
                });
                for (i, e) in entries.iter_mut().enumerate() {
                    e.rank = i + 1;
                }
                boards.insert((task, view), entries);
            }
        }
        self.boards = boards;
    }

    pub fn round_active(&self) -> bool {
        self.round_active
    }

    pub fn leaderboard(&self, task: Task, view: View) -> Vec<LeaderboardEntry> {
        self.boards.get(&(task, view)).cloned().unwrap_or_default()
    }

    pub fn history(&self, team_id: &str, task: Task, view: View) -> Result<Vec<SubmissionHistoryPoint>, BoardError> {
        if !self.runs.iter().any(|r| r.team_id == team_id) {
            return Err(BoardError::UnknownTeam(team_id.to_string()));
        }
        Ok(self
            .runs
            .iter()
            .filter(|r| r.team_id == team_id && r.task == task)
            .map(|r| SubmissionHistoryPoint {
                team_id: r.team_id.clone(),
                task,
                timestamp: r.timestamp,
                bac: r.report(view).overall.bac,
                split: r.report(view).split,
            })
            .collect())
    }

    /// Curve and operating point of the team's best run on `view`.
    pub fn roc(&self, team_id: &str, task: Task, view: View) -> Result<RocView, BoardError> {
        if view == View::Public && self.round_active {
            return Err(BoardError::RocHidden);
        }
        if !self.runs.iter().any(|r| r.team_id == team_id) {
            return Err(BoardError::UnknownTeam(team_id.to_string()));
        }
        let best = best_run(self.runs.iter().filter(|r| r.team_id == team_id && r.task == task), view)
            .ok_or_else(|| BoardError::ScoresUnavailable { team: team_id.to_string(), task })?;
        let report = best.report(view);
        if report.roc.points.is_empty() {
            return Err(BoardError::ScoresUnavailable { team: team_id.to_string(), task });
        }
        Ok(RocView {
            team_id: team_id.to_string(),
            task,
            view,
            curve: report.roc.clone(),
            auc: report.auc,
            eer: report.eer,
            operating_point: report.operating_point,
        })
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub sequence: usize,
}

/// Concurrent readers take the current snapshot; writers serialize on a
/// mutex, append to the log, then publish a rebuilt snapshot.
#[derive(Debug)]
pub struct Board {
    log: Option<PathBuf>,
    snapshot: RwLock<Arc<Snapshot>>,
    events: Mutex<Vec<BoardEvent>>,
}

impl Board {
    pub fn in_memory() -> Self {
        Self { log: None, snapshot: RwLock::new(Arc::new(Snapshot::default())), events: Mutex::new(Vec::new()) }
    }

    /// Open (or create) a log and replay it.
    pub fn open(path: &Path) -> Result<Self, BoardError> {
        let mut events = Vec::new();
        if path.exists() {
            let file = std::fs::File::open(path)?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event = serde_json::from_str(&line).map_err(|e| BoardError::Corrupt { line: i + 1, reason: e.to_string() })?;
                events.push(event);
            }
        }
        let mut snapshot = Snapshot::default();
        for e in &events {
            snapshot.apply(e);
        }
        snapshot.rebuild();
        Ok(Self { log: Some(path.to_path_buf()), snapshot: RwLock::new(Arc::new(snapshot)), events: Mutex::new(events) })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn commit(&self, events: &mut Vec<BoardEvent>, event: BoardEvent) -> Result<usize, BoardError> {
        if let Some(path) = &self.log {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        events.push(event);
        let mut next = Snapshot::default();
        for e in events.iter() {
            next.apply(e);
        }
        next.rebuild();
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(events.len())
    }

    pub fn ingest(&self, run: RunIngest) -> Result<Ack, BoardError> {
        run.validate()?;
        let mut events = self.events.lock().expect("event lock");
        let current = self.snapshot();
        if current.keys.contains(&run.idempotency_key) {
            return Err(BoardError::DuplicateRun(run.idempotency_key));
        }
        if let Some(last) = current.runs.iter().filter(|r| r.team_id == run.team_id && r.task == run.task).last() {
            if run.timestamp <= last.timestamp {
                return Err(BoardError::NonMonotonicTimestamp { team: run.team_id, task: run.task, at: run.timestamp });
            }
        }
        let sequence = self.commit(&mut events, BoardEvent::RunIngested(run))?;
        Ok(Ack { sequence })
    }

    pub fn set_round_active(&self, active: bool) -> Result<Ack, BoardError> {
        let mut events = self.events.lock().expect("event lock");
        let sequence = self.commit(&mut events, BoardEvent::RoundState { active, at: Utc::now() })?;
        Ok(Ack { sequence })
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::scoring::{sweep, ConfusionCounts, Rates};

    /// A report with the given rates and per-source entries.
    pub fn report(task: Task, split: Split, tpr: f64, tnr: f64, sources: &[(&str, f64)]) -> MetricsReport {
        let roc = sweep(&[0.9, 0.6, 0.4, 0.1], &[true, true, false, false]).unwrap();
        MetricsReport {
            format: crate::scoring::REPORT_FORMAT.into(),
            version: crate::scoring::REPORT_VERSION,
            task,
            split,
            anonymized: split == Split::Public,
            counts: ConfusionCounts::default(),
            overall: Rates { tpr, tnr, bac: (tpr + tnr) / 2.0 },
            operating_point: RocPoint { fpr: 1.0 - tnr, tpr },
            per_generated_source: sources.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            per_real_source: BTreeMap::new(),
            per_variant: BTreeMap::new(),
            auc: crate::scoring::auc(&roc),
            eer: crate::scoring::eer(&roc),
            bac_at_eer: 1.0,
            roc,
            mean_inference_time_s: 0.1,
        }
    }

    pub fn run(team: &str, task: Task, key: &str, minute: i64, tpr: f64, tnr: f64) -> RunIngest {
        use chrono::TimeZone;
        RunIngest {
            team_id: team.into(),
            task,
            idempotency_key: key.into(),
            timestamp: Utc.with_ymd_and_hms(2025, 4, 1, 0, 0, 0).unwrap() + chrono::Duration::minutes(minute),
            public: report(task, Split::Public, tpr, tnr, &[("G01", (tpr + tnr) / 2.0)]),
            private: report(task, Split::Private, tpr, tnr, &[("elevenlabs", (tpr + tnr) / 2.0)]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::{report, run};
    use super::*;

    #[test]
    fn first_ingest_creates_entry() {
        let b = Board::in_memory();
        b.ingest(run("isp", Task::Task1, "k1", 0, 0.79, 0.95)).unwrap();
        let lb = b.snapshot().leaderboard(Task::Task1, View::Private);
        assert_eq!(lb.len(), 1);
        assert_eq!(lb[0].submission_count, 1);
    }

    #[test]
    fn best_is_max_over_history() {
        let b = Board::in_memory();
        b.ingest(run("isp", Task::Task1, "k1", 0, 0.52, 0.52)).unwrap();
        b.ingest(run("isp", Task::Task1, "k2", 5, 0.87, 0.87)).unwrap();
        b.ingest(run("isp", Task::Task1, "k3", 9, 0.70, 0.70)).unwrap();
        let e = &b.snapshot().leaderboard(Task::Task1, View::Private)[0];
        assert!((e.best_bac - 0.87).abs() < 1e-12);
        assert!((e.latest_bac - 0.70).abs() < 1e-12);
        assert_eq!(b.snapshot().history("isp", Task::Task1, View::Private).unwrap().len(), 3);
    }

    #[test]
    fn replay_is_rejected_without_change() {
        let b = Board::in_memory();
        b.ingest(run("isp", Task::Task1, "k1", 0, 0.79, 0.95)).unwrap();
        let before = b.snapshot().leaderboard(Task::Task1, View::Private);
        assert!(matches!(b.ingest(run("isp", Task::Task1, "k1", 10, 0.9, 0.9)), Err(BoardError::DuplicateRun(_))));
        assert_eq!(b.snapshot().leaderboard(Task::Task1, View::Private), before);
        assert_eq!(b.snapshot().run_count(), 1);
    }

    #[test]
    fn timestamps_must_increase_per_team_and_task() {
        let b = Board::in_memory();
        b.ingest(run("isp", Task::Task1, "k1", 5, 0.79, 0.95)).unwrap();
        assert!(matches!(b.ingest(run("isp", Task::Task1, "k2", 5, 0.8, 0.9)), Err(BoardError::NonMonotonicTimestamp { .. })));
        b.ingest(run("isp", Task::Task2, "k3", 1, 0.8, 0.9)).unwrap();
        b.ingest(run("vip", Task::Task1, "k4", 1, 0.8, 0.9)).unwrap();
    }

    #[test]
    fn ties_break_by_earliest_achievement() {
        let b = Board::in_memory();
        b.ingest(run("late", Task::Task1, "k1", 10, 0.8, 0.8)).unwrap();
        b.ingest(run("early", Task::Task1, "k2", 3, 0.8, 0.8)).unwrap();
        b.ingest(run("early", Task::Task1, "k3", 20, 0.8, 0.8)).unwrap();
        let lb = b.snapshot().leaderboard(Task::Task1, View::Private);
        assert_eq!(lb.iter().map(|e| e.team_id.as_str()).collect::<Vec<_>>(), vec!["early", "late"]);
        assert_eq!(lb[0].best_achieved_at, run("x", Task::Task1, "k", 3, 0.0, 0.0).timestamp);
    }

    #[test]
    fn history_filters_by_task_and_rejects_unknown_team() {
        let b = Board::in_memory();
        b.ingest(run("isp", Task::Task1, "a", 0, 0.5, 0.5)).unwrap();
        b.ingest(run("isp", Task::Task2, "b", 1, 0.6, 0.6)).unwrap();
        b.ingest(run("isp", Task::Task1, "c", 2, 0.7, 0.7)).unwrap();
        let h = b.snapshot().history("isp", Task::Task1, View::Public).unwrap();
        assert_eq!(h.len(), 2);
        assert!(h.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(h.iter().all(|p| p.split == Split::Public));
        assert!(matches!(b.snapshot().history("nobody", Task::Task1, View::Public), Err(BoardError::UnknownTeam(_))));
    }

    #[test]
    fn public_reports_must_be_anonymized() {
        let b = Board::in_memory();
        let mut leaky = run("isp", Task::Task1, "k", 0, 0.79, 0.95);
        leaky.public = report(Task::Task1, Split::Public, 0.79, 0.95, &[("elevenlabs", 0.97)]);
        assert!(matches!(b.ingest(leaky), Err(BoardError::InvalidReport(_))));
        let mut swapped = run("isp", Task::Task1, "k", 0, 0.79, 0.95);
        swapped.public = swapped.private.clone();
        assert!(matches!(b.ingest(swapped), Err(BoardError::InvalidReport(_))));
    }

    #[test]
    fn roc_operating_point_and_round_flag() {
        let b = Board::in_memory();
        b.ingest(run("isp", Task::Task1, "k", 0, 0.79, 0.95)).unwrap();
        let roc = b.snapshot().roc("isp", Task::Task1, View::Private).unwrap();
        assert!((roc.operating_point.fpr - 0.05).abs() < 1e-12 && roc.operating_point.tpr == 0.79);
        b.set_round_active(true).unwrap();
        assert!(matches!(b.snapshot().roc("isp", Task::Task1, View::Public), Err(BoardError::RocHidden)));
        assert!(b.snapshot().roc("isp", Task::Task1, View::Private).is_ok());
        assert!(matches!(b.snapshot().roc("isp", Task::Task3, View::Private), Err(BoardError::ScoresUnavailable { .. })));
    }

    #[test]
    fn restart_reproduces_views() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("board.jsonl");
        let b = Board::open(&path).unwrap();
        b.ingest(run("isp", Task::Task1, "k1", 0, 0.79, 0.95)).unwrap();
        b.ingest(run("vip", Task::Task1, "k2", 1, 0.74, 0.80)).unwrap();
        b.set_round_active(true).unwrap();
        let reopened = Board::open(&path).unwrap();
        for view in [View::Public, View::Private] {
            assert_eq!(reopened.snapshot().leaderboard(Task::Task1, view), b.snapshot().leaderboard(Task::Task1, view));
        }
        assert!(reopened.snapshot().round_active());
        assert!(matches!(reopened.ingest(run("isp", Task::Task1, "k1", 9, 0.9, 0.9)), Err(BoardError::DuplicateRun(_))));
    }
}
