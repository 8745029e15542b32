//! Blind evaluation of synthetic speech detectors: dataset manifests,
//! audio post-processing and laundering, sequestered submission runs,
//! scoring, and the leaderboard store.

pub mod audio;
pub mod augment;
pub mod board;
pub mod launder;
pub mod manifest;
pub mod provenance;
pub mod rng;
pub mod runner;
pub mod scoring;

pub use audio::AudioBuffer;
pub use augment::{AugmentOp, AugmentationSpec};
pub use board::{Board, LeaderboardEntry, RunIngest, SubmissionHistoryPoint, View};
pub use launder::{LaunderSpec, LaunderTechnique};
pub use manifest::{AnonymizationMap, Label, Manifest, SampleRecord, SourceDescriptor, Split, Task, Variant};
pub use provenance::{ProvenanceRecord, ProvenanceStep};
pub use runner::{RunConfig, RunResult, RunStatus, SubmissionJob};
pub use scoring::{ConfusionCounts, DecisionRecord, MetricsReport, RocCurve, RocPoint};
