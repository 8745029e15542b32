//! Optional TOML configuration. Command-line flags take precedence over
//! file values, which take precedence over built-in defaults.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! real = "data/real"
//! generated = "data/generated"
//! registry = "plugins.toml"
//! ledger = "state/quota.jsonl"
//! run_log = "state/runs.jsonl"
//! board = "state/board.jsonl"
//!
//! [defaults]
//! per_source = 200
//! clips_per_model = 20
//! per_technique = 50
//! time_budget_s = 10000
//! quota_per_day = 5
//! jobs = 4
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub real: Option<PathBuf>,
    pub generated: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub run_log: Option<PathBuf>,
    pub board: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub per_source: Option<usize>,
    pub clips_per_model: Option<usize>,
    pub per_technique: Option<usize>,
    pub time_budget_s: Option<f64>,
    pub quota_per_day: Option<u32>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub defaults: Defaults,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: CliConfig =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.real, &mut p.generated, &mut p.registry, &mut p.ledger, &mut p.run_log, &mut p.board] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    /// The seed from the flag, the file, or `inherited` (typically the seed
    /// of an input manifest); otherwise a fresh one. The seed in use is
    /// always printed.
    pub fn seed(&self, flag: Option<u64>, inherited: Option<u64>) -> u64 {
        let (seed, origin) = match (flag.or(self.seed), inherited) {
            (Some(s), _) => (s, "given"),
            (None, Some(s)) => (s, "inherited"),
            (None, None) => (rand::random::<u64>() >> 11, "generated"),
        };
        eprintln!("seed: {seed} ({origin})");
        seed
    }
}

/// Flag, else config value, else default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Flag, else config value, else an error naming the flag.
pub fn require<T>(flag: Option<T>, config: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(config).ok_or_else(|| CliError::Usage(format!("{name} is required (flag or config file)")))
}
