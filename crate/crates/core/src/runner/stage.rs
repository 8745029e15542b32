//! Blind staging: audio is re-written as `<sample_id>.wav` with only the
//! format and sample chunks, next to a `files.txt` listing. Nothing else
//! from the manifest reaches the staged tree.

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use super::RunnerError;
use crate::manifest::Manifest;

pub const LISTING: &str = "files.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct StagedDataset {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

/// Copy the samples of a WAV file, dropping every metadata chunk.
fn restage_wav(src: &Path, dst: &Path) -> Result<(), String> {
    let mut reader = hound::WavReader::open(src).map_err(|e| e.to_string())?;
    let spec = reader.spec();
    let mut writer = hound::WavWriter::create(dst, spec).map_err(|e| e.to_string())?;
    match spec.sample_format {
        hound::SampleFormat::Float => {
            for s in reader.samples::<f32>() {
                writer.write_sample(s.map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            }
        }
        hound::SampleFormat::Int => {
            for s in reader.samples::<i32>() {
                writer.write_sample(s.map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            }
        }
    }
    writer.finalize().map_err(|e| e.to_string())
}

fn set_mode(path: &Path, mode: u32) -> Result<(), RunnerError> {
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(mode))?;
    Ok(())
}

/// Stage every sample of `m` into `stage_dir` (created, must not exist or
/// be empty) and make the tree read-only.
pub fn stage_dataset(m: &Manifest, stage_dir: &Path) -> Result<StagedDataset, RunnerError> {
    let mut missing = Vec::new();
    let mut sources = Vec::with_capacity(m.samples.len());
    for s in &m.samples {
        match m.resolve(s).filter(|p| p.is_file()) {
            Some(p) => sources.push((s.sample_id.clone(), p)),
            None => missing.push(s.sample_id.clone()),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(RunnerError::MissingAudio(missing));
    }
    std::fs::create_dir_all(stage_dir)?;
    sources.sort();
    let mut files = Vec::with_capacity(sources.len());
    for (id, src) in &sources {
        let name = format!("{id}.wav");
        let dst = stage_dir.join(&name);
        restage_wav(src, &dst).map_err(|reason| RunnerError::Stage(format!("{}: {reason}", src.display())))?;
        set_mode(&dst, 0o444)?;
        files.push(name);
    }
    let listing = stage_dir.join(LISTING);
    std::fs::write(&listing, files.iter().map(|f| format!("{f}\n")).collect::<String>())?;
    set_mode(&listing, 0o444)?;
    set_mode(stage_dir, 0o555)?;
    Ok(StagedDataset { dir: stage_dir.to_path_buf(), files })
}

/// Make a staged tree writable again so it can be removed.
pub fn unstage(staged: &StagedDataset) -> Result<(), RunnerError> {
    if staged.dir.exists() {
        set_mode(&staged.dir, 0o755)?;
        std::fs::remove_dir_all(&staged.dir)?;
    }
    Ok(())
}
