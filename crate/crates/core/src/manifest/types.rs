use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Task1,
    Task2,
    Task3,
}

impl Task {
    pub fn from_number(n: u8) -> Option<Task> {
        match n {
            1 => Some(Task::Task1),
            2 => Some(Task::Task2),
            3 => Some(Task::Task3),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Task1 => "task1",
            Task::Task2 => "task2",
            Task::Task3 => "task3",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "task1" => Ok(Task::Task1),
            "2" | "task2" => Ok(Task::Task2),
            "3" | "task3" => Ok(Task::Task3),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

/// Ground-truth class. The positive class for detection is `Generated`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Generated => "generated",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Public,
    Private,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Public => "public",
            Split::Private => "private",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "public" => Ok(Split::Public),
            "private" => Ok(Split::Private),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub kind: Label,
    pub display_name: String,
    pub native_sample_rate_hz: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    pub in_public_split: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice_cloning: Option<bool>,
}

/// Which transformation produced a sample: `original`, or the id of an
/// augmentation or laundering step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Variant(String);

impl Variant {
    pub const ORIGINAL: &'static str = "original";

    pub fn original() -> Self {
        Variant(Self::ORIGINAL.to_string())
    }

    pub fn new(id: impl Into<String>) -> Self {
        Variant(id.into())
    }

    pub fn is_original(&self) -> bool {
        self.0 == Self::ORIGINAL
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub source_id: String,
    pub label: Label,
    /// Relative, `/`-separated; resolved through [`AudioRoots`].
    pub file_path: String,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_sample_id: Option<String>,
}

/// Directories the relative `file_path`s of a manifest are resolved against.
/// Originals live under the real/generated roots; derived variants under
/// `derived`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AudioRoots {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub task: Task,
    pub split: Split,
    pub seed: u64,
    pub roots: AudioRoots,
    pub sources: Vec<SourceDescriptor>,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn source(&self, source_id: &str) -> Option<&SourceDescriptor> {
        self.sources.iter().find(|s| s.source_id == source_id)
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn samples_of<'a>(&'a self, source_id: &'a str) -> impl Iterator<Item = &'a SampleRecord> + 'a {
        self.samples.iter().filter(move |s| s.source_id == source_id)
    }

    pub fn count_by_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.samples.iter().map(|s| s.duration_s).sum()
    }

    /// Absolute location of a sample's audio, if the relevant root is known.
    pub fn resolve(&self, sample: &SampleRecord) -> Option<PathBuf> {
        let root = if !sample.variant.is_original() {
            self.roots.derived.as_ref()
        } else {
            match sample.label {
                Label::Real => self.roots.real.as_ref(),
                Label::Generated => self.roots.generated.as_ref(),
            }
        }?;
        Some(join_relative(root, &sample.file_path))
    }
}

pub fn join_relative(root: &Path, rel: &str) -> PathBuf {
    rel.split('/').filter(|p| !p.is_empty()).fold(root.to_path_buf(), |acc, part| acc.join(part))
}
