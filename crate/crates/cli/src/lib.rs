//! Command-line front end for the blind-evaluation toolkit, plus the
//! leaderboard HTTP service and a reference spectral-flatness detector.

pub mod commands;
pub mod config;
pub mod detect;
pub mod server;

use std::process::ExitCode;

use blindeval::augment::AugmentError;
use blindeval::board::BoardError;
use blindeval::launder::LaunderError;
use blindeval::manifest::ManifestError;
use blindeval::runner::RunnerError;
use blindeval::scoring::ScoringError;
use blindeval::RunStatus;
use thiserror::Error;

/// Exit codes, also listed in `blindeval --help`.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INPUT: u8 = 3;
    pub const IO: u8 = 4;
    pub const SUBMISSION: u8 = 5;
    pub const TIMEOUT: u8 = 6;
    pub const CRASHED: u8 = 7;
    pub const QUOTA: u8 = 8;
    pub const INVALID_OUTPUT: u8 = 9;
    pub const PLUGIN: u8 = 10;
    pub const SERVER: u8 = 11;
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0   success
  1   internal error
  2   usage error (bad or missing flags)
  3   invalid input (manifest, plan, config, report)
  4   i/o error or missing audio
  5   invalid submission file
  6   detector timed out
  7   detector crashed or could not be isolated
  8   daily quota exhausted
  9   detector produced invalid output
  10  transcoder plugin missing or failed
  11  leaderboard server error";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Submission(String),
    #[error("{0}")]
    Plugin(String),
    #[error("{0}")]
    Server(String),
    /// A detector run ended in a non-completed state.
    #[error("run {status:?}: {diagnostics}")]
    Run { status: RunStatus, diagnostics: String },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Input(_) => exit::INPUT,
            CliError::Io(_) => exit::IO,
            CliError::Submission(_) => exit::SUBMISSION,
            CliError::Plugin(_) => exit::PLUGIN,
            CliError::Server(_) => exit::SERVER,
            CliError::Run { status, .. } => status_code(*status),
            CliError::Internal(_) => exit::INTERNAL,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

pub fn status_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Completed => exit::OK,
        RunStatus::Timeout => exit::TIMEOUT,
        RunStatus::Crashed => exit::CRASHED,
        RunStatus::QuotaRejected => exit::QUOTA,
        RunStatus::InvalidOutput => exit::INVALID_OUTPUT,
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Io(_) | ManifestError::UndecodableFile(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::PluginMissing(_)
            | AugmentError::PluginFailed { .. }
            | AugmentError::DecodeFailed { .. }
            | AugmentError::Registry(_) => CliError::Plugin(e.to_string()),
            AugmentError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<LaunderError> for CliError {
    fn from(e: LaunderError) -> Self {
        match e {
            LaunderError::Io(_) | LaunderError::UndecodableFile(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Io(_) => CliError::Io(e.to_string()),
            ScoringError::UndefinedClassRate(_) | ScoringError::MissingPseudonym(_) => CliError::Input(e.to_string()),
            _ => CliError::Submission(e.to_string()),
        }
    }
}

impl From<RunnerError> for CliError {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::MissingAudio(_) | RunnerError::Io(_) | RunnerError::Stage(_) | RunnerError::Ledger(_) => {
                CliError::Io(e.to_string())
            }
            RunnerError::InvalidJob(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<BoardError> for CliError {
    fn from(e: BoardError) -> Self {
        match e {
            BoardError::Io(_) => CliError::Io(e.to_string()),
            BoardError::Corrupt { .. } => CliError::Server(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
