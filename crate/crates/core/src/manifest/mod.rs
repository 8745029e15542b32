//! Dataset catalog: task manifests, public/private splits and source
//! anonymization.

mod anon;
pub mod io;
mod types;
mod validate;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Deserialize;
use thiserror::Error;

use crate::audio;
use crate::augment::AugmentationSpec;
use crate::launder::LaunderSpec;
use crate::rng;

pub use anon::{anonymize_sources, AnonymizationMap};
pub use types::{join_relative, AudioRoots, Label, Manifest, SampleRecord, SourceDescriptor, Split, Task, Variant};
pub use validate::{validate_manifest, ValidationReport, Violation};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("source {source_id} has {found} usable files, {needed} needed")]
    SourceUnderfull { source_id: String, found: usize, needed: usize },
    #[error("undecodable audio file {0}")]
    UndecodableFile(PathBuf),
    #[error("source {source_id} has {found} original clips, {needed} needed")]
    InsufficientClips { source_id: String, found: usize, needed: usize },
    #[error("unknown or invalid operator {0:?}")]
    UnknownOperator(String),
    #[error("operator plan is empty")]
    EmptyPlan,
    #[error("expected a {expected} manifest, got {found}")]
    WrongTask { expected: Task, found: Task },
    #[error("count must be positive")]
    ZeroCount,
    #[error("bad source metadata in {path}: {reason}")]
    SourceMetadata { path: PathBuf, reason: String },
    #[error("manifest format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Optional `source.toml` placed in a source directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceMetadata {
    display_name: Option<String>,
    #[serde(default)]
    public: bool,
    language: Option<String>,
    voice_cloning: Option<bool>,
    sample_rate_hz: Option<u32>,
}

pub(crate) fn original_sample_id(source_id: &str, file_name: &str) -> String {
    format!("s{}", rng::digest_hex(&[source_id.as_bytes(), file_name.as_bytes()], 16))
}

pub(crate) fn derived_sample_id(parent_id: &str, variant: &str) -> String {
    format!("s{}", rng::digest_hex(&[parent_id.as_bytes(), variant.as_bytes()], 16))
}

fn derived_record(parent: &SampleRecord, variant: &str, sample_rate_hz: u32) -> SampleRecord {
    let sample_id = derived_sample_id(&parent.sample_id, variant);
    SampleRecord {
        file_path: format!("{}/{}.wav", parent.source_id, sample_id),
        sample_id,
        source_id: parent.source_id.clone(),
        label: parent.label,
        duration_s: parent.duration_s,
        sample_rate_hz,
        variant: Variant::new(variant),
        parent_sample_id: Some(parent.sample_id.clone()),
    }
}

fn list_dirs(root: &Path) -> Result<Vec<PathBuf>, ManifestError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn list_wavs(dir: &Path) -> Result<Vec<String>, ManifestError> {
    let mut files: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
        .collect();
    files.sort();
    Ok(files)
}

fn scan_sources(
    root: &Path,
    kind: Label,
    per_source: usize,
    seed: u64,
) -> Result<(Vec<SourceDescriptor>, Vec<SampleRecord>), ManifestError> {
    let mut sources = Vec::new();
    let mut samples = Vec::new();
    for dir in list_dirs(root)? {
        let source_id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let meta_path = dir.join("source.toml");
        let meta: SourceMetadata = if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path)?;
            toml::from_str(&text)
                .map_err(|e| ManifestError::SourceMetadata { path: meta_path.clone(), reason: e.to_string() })?
        } else {
            SourceMetadata::default()
        };
        if kind == Label::Real && meta.voice_cloning.is_some() {
            return Err(ManifestError::SourceMetadata {
                path: meta_path,
                reason: "voice_cloning is only meaningful for generated sources".into(),
            });
        }
        let mut files = list_wavs(&dir)?;
        if files.len() < per_source {
            return Err(ManifestError::SourceUnderfull { source_id, found: files.len(), needed: per_source });
        }
        files.shuffle(&mut rng::stream(seed, &format!("select/{source_id}")));
        let mut chosen: Vec<String> = files.into_iter().take(per_source).collect();
        chosen.sort();

        let mut native_rate = meta.sample_rate_hz;
        for name in &chosen {
            let path = dir.join(name);
            let buf = audio::read_wav(&path).map_err(|_| ManifestError::UndecodableFile(path.clone()))?;
            native_rate.get_or_insert(buf.sample_rate_hz());
            samples.push(SampleRecord {
                sample_id: original_sample_id(&source_id, name),
                source_id: source_id.clone(),
                label: kind,
                file_path: format!("{source_id}/{name}"),
                duration_s: buf.duration_s(),
                sample_rate_hz: buf.sample_rate_hz(),
                variant: Variant::original(),
                parent_sample_id: None,
            });
        }
        sources.push(SourceDescriptor {
            display_name: meta.display_name.unwrap_or_else(|| source_id.clone()),
            source_id,
            kind,
            native_sample_rate_hz: native_rate.unwrap_or(1),
            language: meta.language,
            in_public_split: meta.public,
            voice_cloning: meta.voice_cloning,
        });
    }
    Ok((sources, samples))
}

/// Build the unprocessed-detection manifest from `<root>/<source_id>/<file>.wav`
/// trees, selecting exactly `per_source` files per source with a seeded
/// shuffle. Durations and rates come from decoding the files.
pub fn build_task1_manifest(
    real_root: &Path,
    gen_root: &Path,
    per_source: usize,
    seed: u64,
) -> Result<Manifest, ManifestError> {
    if per_source == 0 {
        return Err(ManifestError::ZeroCount);
    }
    let (mut sources, mut samples) = scan_sources(real_root, Label::Real, per_source, seed)?;
    let (gen_sources, gen_samples) = scan_sources(gen_root, Label::Generated, per_source, seed)?;
    sources.extend(gen_sources);
    samples.extend(gen_samples);
    Ok(Manifest {
        task: Task::Task1,
        split: Split::Private,
        seed,
        roots: AudioRoots {
            real: Some(real_root.to_path_buf()),
            generated: Some(gen_root.to_path_buf()),
            derived: None,
        },
        sources,
        samples,
    })
}

fn require_task1(m: &Manifest) -> Result<(), ManifestError> {
    if m.task != Task::Task1 {
        return Err(ManifestError::WrongTask { expected: Task::Task1, found: m.task });
    }
    Ok(())
}

fn check_variant_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), ManifestError> {
    let mut seen = HashSet::new();
    for id in ids {
        let ok = !id.is_empty()
            && id != Variant::ORIGINAL
            && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !ok || !seen.insert(id) {
            return Err(ManifestError::UnknownOperator(id.to_string()));
        }
    }
    Ok(())
}

fn sampled_originals<'a>(
    task1: &'a Manifest,
    source: &'a SourceDescriptor,
    needed: usize,
    seed: u64,
    stream: &str,
) -> Result<Vec<&'a SampleRecord>, ManifestError> {
    let mut originals: Vec<&SampleRecord> =
        task1.samples_of(&source.source_id).filter(|s| s.variant.is_original()).collect();
    if originals.len() < needed {
        return Err(ManifestError::InsufficientClips {
            source_id: source.source_id.clone(),
            found: originals.len(),
            needed,
        });
    }
    originals.shuffle(&mut rng::stream(seed, &format!("{stream}/{}", source.source_id)));
    originals.truncate(needed);
    originals.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(originals)
}

/// Derive the post-processing manifest. Each generated source contributes
/// `clips_per_model` sampled originals, each kept unaugmented plus one
/// variant per plan entry. Real samples are shared unchanged.
pub fn derive_task2_manifest(
    task1: &Manifest,
    plan: &[AugmentationSpec],
    clips_per_model: usize,
    seed: u64,
) -> Result<Manifest, ManifestError> {
    require_task1(task1)?;
    if plan.is_empty() {
        return Err(ManifestError::EmptyPlan);
    }
    if clips_per_model == 0 {
        return Err(ManifestError::ZeroCount);
    }
    for spec in plan {
        if spec.op.is_identity() {
            // the unaugmented clip is always retained; listing it would double it
            return Err(ManifestError::UnknownOperator(spec.id.clone()));
        }
        spec.validate().map_err(|_| ManifestError::UnknownOperator(spec.id.clone()))?;
    }
    check_variant_ids(plan.iter().map(|p| p.id.as_str()))?;

    let mut samples: Vec<SampleRecord> =
        task1.samples.iter().filter(|s| s.label == Label::Real).cloned().collect();
    for source in task1.sources.iter().filter(|s| s.kind == Label::Generated) {
        for clip in sampled_originals(task1, source, clips_per_model, seed, "task2")? {
            samples.push(clip.clone());
            for spec in plan {
                let rate = spec.op.output_rate(clip.sample_rate_hz);
                samples.push(derived_record(clip, &spec.id, rate));
            }
        }
    }
    Ok(Manifest {
        task: Task::Task2,
        split: task1.split,
        seed,
        roots: AudioRoots { derived: None, ..task1.roots.clone() },
        sources: task1.sources.clone(),
        samples,
    })
}

/// Derive the laundering manifest: per generated source, `per_technique`
/// distinct originals per technique (disjoint across techniques), each
/// replaced by its laundered variant. Real samples are shared unchanged.
pub fn derive_task3_manifest(
    task1: &Manifest,
    techniques: &[LaunderSpec],
    per_technique: usize,
    seed: u64,
) -> Result<Manifest, ManifestError> {
    require_task1(task1)?;
    if techniques.is_empty() {
        return Err(ManifestError::EmptyPlan);
    }
    if per_technique == 0 {
        return Err(ManifestError::ZeroCount);
    }
    for t in techniques {
        t.validate().map_err(|_| ManifestError::UnknownOperator(t.variant_id().to_string()))?;
    }
    check_variant_ids(techniques.iter().map(|t| t.variant_id()))?;

    let mut samples: Vec<SampleRecord> =
        task1.samples.iter().filter(|s| s.label == Label::Real).cloned().collect();
    for source in task1.sources.iter().filter(|s| s.kind == Label::Generated) {
        let clips = sampled_originals(task1, source, per_technique * techniques.len(), seed, "task3")?;
        for (t, block) in techniques.iter().zip(clips.chunks(per_technique)) {
            for clip in block {
                samples.push(derived_record(clip, t.variant_id(), clip.sample_rate_hz));
            }
        }
    }
    Ok(Manifest {
        task: Task::Task3,
        split: task1.split,
        seed,
        roots: AudioRoots { derived: None, ..task1.roots.clone() },
        sources: task1.sources.clone(),
        samples,
    })
}

/// Keep only sources flagged for the public split and their samples.
pub fn project_public(m: &Manifest) -> Manifest {
    let public: BTreeSet<&str> =
        m.sources.iter().filter(|s| s.in_public_split).map(|s| s.source_id.as_str()).collect();
    Manifest {
        task: m.task,
        split: Split::Public,
        seed: m.seed,
        roots: m.roots.clone(),
        sources: m.sources.iter().filter(|s| public.contains(s.source_id.as_str())).cloned().collect(),
        samples: m.samples.iter().filter(|s| public.contains(s.source_id.as_str())).cloned().collect(),
    }
}


#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::testutil::synthetic;
    use super::*;
    use crate::augment::{default_task2_plan, AugmentOp};
    use crate::launder::{LaunderParams, LaunderTechnique};

    fn write_tree(root: &Path, sources: &[(&str, usize)]) {
        for (id, n) in sources {
            let dir = root.join(id);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..*n {
                let buf = audio::AudioBuffer::mono(vec![0.1; 800 + i], 8000).unwrap();
                audio::write_wav(&dir.join(format!("f{i:03}.wav")), &buf).unwrap();
            }
        }
    }

    fn plan(n: usize) -> Vec<AugmentationSpec> {
        (0..n)
            .map(|i| AugmentationSpec { id: format!("op{i}"), op: AugmentOp::SpeechFilter { low_hz: 50.0, high_hz: 7000.0 } })
            .collect()
    }

    fn launder(t: LaunderTechnique) -> LaunderSpec {
        LaunderSpec::with_defaults(t)
    }

    #[test]
    fn task1_selects_per_source_and_is_seed_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (real, gen) = (dir.path().join("real"), dir.path().join("gen"));
        write_tree(&real, &[("r1", 30)]);
        write_tree(&gen, &[("g1", 30)]);
        let a = build_task1_manifest(&real, &gen, 10, 1).unwrap();
        let b = build_task1_manifest(&real, &gen, 10, 1).unwrap();
        let c = build_task1_manifest(&real, &gen, 10, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 20);
        let ids = |m: &Manifest| m.samples.iter().map(|s| s.sample_id.clone()).collect::<Vec<_>>();
        assert_ne!(ids(&a), ids(&c));
        assert!(validate_manifest(&a, None).is_valid());
        // durations come from decoded audio
        assert!(a.samples.iter().all(|s| s.duration_s >= 0.1 && s.sample_rate_hz == 8000));
    }

    #[test]
    fn task1_exact_fill_takes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let (real, gen) = (dir.path().join("real"), dir.path().join("gen"));
        write_tree(&real, &[("r1", 5)]);
        std::fs::create_dir_all(&gen).unwrap();
        for seed in [0, 1, 99] {
            let m = build_task1_manifest(&real, &gen, 5, seed).unwrap();
            let files: BTreeSet<_> = m.samples.iter().map(|s| s.file_path.clone()).collect();
            assert_eq!(files.len(), 5);
        }
    }

    #[test]
    fn task1_underfull_and_undecodable() {
        let dir = tempfile::tempdir().unwrap();
        let (real, gen) = (dir.path().join("real"), dir.path().join("gen"));
        write_tree(&real, &[("r1", 3)]);
        std::fs::create_dir_all(&gen).unwrap();
        match build_task1_manifest(&real, &gen, 4, 0) {
            Err(ManifestError::SourceUnderfull { source_id, found: 3, needed: 4 }) => assert_eq!(source_id, "r1"),
            other => panic!("{other:?}"),
        }
        std::fs::write(real.join("r1").join("zzz.wav"), b"not a wav").unwrap();
        assert!(matches!(build_task1_manifest(&real, &gen, 4, 0), Err(ManifestError::UndecodableFile(_))));
    }

    #[test]
    fn task1_reads_source_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let (real, gen) = (dir.path().join("real"), dir.path().join("gen"));
        write_tree(&real, &[("r1", 2)]);
        write_tree(&gen, &[("g1", 2)]);
        std::fs::write(real.join("r1/source.toml"), "display_name = \"Conference Talks\"\npublic = true\nlanguage = \"en\"\n").unwrap();
        std::fs::write(gen.join("g1/source.toml"), "voice_cloning = true\n").unwrap();
        let m = build_task1_manifest(&real, &gen, 2, 0).unwrap();
        let r = m.source("r1").unwrap();
        assert_eq!(r.display_name, "Conference Talks");
        assert!(r.in_public_split);
        assert_eq!(m.source("g1").unwrap().voice_cloning, Some(true));
        std::fs::write(real.join("r1/source.toml"), "voice_cloning = false\n").unwrap();
        assert!(matches!(build_task1_manifest(&real, &gen, 2, 0), Err(ManifestError::SourceMetadata { .. })));
    }

    #[test]
    fn paper_scale_task1_counts() {
        let real: Vec<String> = (0..21).map(|i| format!("real{i:02}")).collect();
        let gen: Vec<String> = (0..13).map(|i| format!("gen{i:02}")).collect();
        let r: Vec<(&str, bool)> = real.iter().enumerate().map(|(i, s)| (s.as_str(), i < 10)).collect();
        let g: Vec<(&str, bool)> = gen.iter().enumerate().map(|(i, s)| (s.as_str(), i < 7)).collect();
        let m = synthetic(&r, &g, 200);
        assert_eq!(m.count_by_label(Label::Real), 4200);
        assert_eq!(m.count_by_label(Label::Generated), 2600);

        let t2 = derive_task2_manifest(&m, &default_task2_plan(), 20, 5).unwrap();
        for g in &gen {
            assert_eq!(t2.samples_of(g).count(), 380);
        }
        let t3 = derive_task3_manifest(&m, &LaunderSpec::all_default(), 50, 5).unwrap();
        assert_eq!(t3.count_by_label(Label::Generated), 2600);
        for g in &gen {
            assert_eq!(t3.samples_of(g).count(), 200);
        }

        let public = project_public(&m);
        assert_eq!(public.sources.iter().filter(|s| s.kind == Label::Real).count(), 10);
        assert_eq!(public.sources.iter().filter(|s| s.kind == Label::Generated).count(), 7);
    }

    #[test]
    fn task2_toy_lineage() {
        let m = synthetic(&[("r", true)], &[("g1", true), ("g2", false)], 8);
        let t2 = derive_task2_manifest(&m, &plan(2), 3, 11).unwrap();
        for g in ["g1", "g2"] {
            let group: Vec<_> = t2.samples_of(g).collect();
            assert_eq!(group.len(), 9);
            let clips: BTreeSet<&str> =
                group.iter().filter(|s| s.variant.is_original()).map(|s| s.sample_id.as_str()).collect();
            assert_eq!(clips.len(), 3);
            for s in group.iter().filter(|s| !s.variant.is_original()) {
                assert!(clips.contains(s.parent_sample_id.as_deref().unwrap()));
            }
        }
        assert!(validate_manifest(&t2, None).is_valid(), "{:?}", validate_manifest(&t2, None));
        // real samples identical
        let real1: Vec<_> = m.samples.iter().filter(|s| s.label == Label::Real).collect();
        let real2: Vec<_> = t2.samples.iter().filter(|s| s.label == Label::Real).collect();
        assert_eq!(real1, real2);
    }

    #[test]
    fn task2_rejects_bad_plans() {
        let m = synthetic(&[("r", true)], &[("g", true)], 4);
        assert!(matches!(derive_task2_manifest(&m, &[], 2, 0), Err(ManifestError::EmptyPlan)));
        let unaug = vec![AugmentationSpec { id: "unaugmented".into(), op: AugmentOp::Unaugmented }];
        assert!(matches!(derive_task2_manifest(&m, &unaug, 2, 0), Err(ManifestError::UnknownOperator(_))));
        let mut dup = plan(2);
        dup[1].id = dup[0].id.clone();
        assert!(matches!(derive_task2_manifest(&m, &dup, 2, 0), Err(ManifestError::UnknownOperator(_))));
        assert!(matches!(
            derive_task2_manifest(&m, &plan(1), 5, 0),
            Err(ManifestError::InsufficientClips { found: 4, needed: 5, .. })
        ));
        let t2 = derive_task2_manifest(&m, &plan(1), 2, 0).unwrap();
        assert!(matches!(derive_task2_manifest(&t2, &plan(1), 2, 0), Err(ManifestError::WrongTask { .. })));
    }

    #[test]
    fn task3_counts_by_group() {
        let m = synthetic(&[("r", true)], &[("g1", true), ("g2", true)], 10);
        let t3 = derive_task3_manifest(&m, &[launder(LaunderTechnique::CarNoise), launder(LaunderTechnique::Reverb)], 5, 3)
            .unwrap();
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for s in t3.samples.iter().filter(|s| s.label == Label::Generated) {
            *counts.entry((s.source_id.clone(), s.variant.to_string())).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 5));
        for g in ["g1", "g2"] {
            assert_eq!(t3.samples_of(g).count(), 10);
            let parents: BTreeSet<_> = t3.samples_of(g).map(|s| s.parent_sample_id.clone()).collect();
            assert_eq!(parents.len(), 10, "techniques use disjoint clips");
        }
        assert!(validate_manifest(&t3, None).is_valid(), "{:?}", validate_manifest(&t3, None));

        let single = synthetic(&[], &[("g", true)], 1);
        let t3 = derive_task3_manifest(&single, &[launder(LaunderTechnique::Reverb)], 1, 0).unwrap();
        assert_eq!(t3.samples.len(), 1);
        assert!(matches!(
            derive_task3_manifest(&m, &[launder(LaunderTechnique::Reverb), launder(LaunderTechnique::Reverb)], 1, 0),
            Err(ManifestError::UnknownOperator(_))
        ));
        let incomplete = LaunderSpec { technique: LaunderTechnique::OverAir, params: LaunderParams::default() };
        assert!(matches!(derive_task3_manifest(&m, &[incomplete], 1, 0), Err(ManifestError::UnknownOperator(_))));
    }

    #[test]
    fn public_projection_edges() {
        let m = synthetic(&[("a", true), ("b", false)], &[("g", true)], 3);
        let p = project_public(&m);
        assert_eq!(p.split, Split::Public);
        assert_eq!(p.samples.len(), 6);
        assert!(p.samples.iter().all(|s| m.samples.contains(s)));

        let all = synthetic(&[("a", true)], &[("g", true)], 3);
        assert_eq!(project_public(&all).samples, all.samples);
        let none = synthetic(&[("a", false)], &[("g", false)], 3);
        let p = project_public(&none);
        assert!(p.samples.is_empty() && p.sources.is_empty());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = synthetic(&[("a", true)], &[("g", false)], 2);
        let text = io::to_string(&m);
        assert!(text.starts_with("{\"format\":\"blindeval-manifest\",\"version\":1"));
        let back = io::read_manifest(text.as_bytes()).unwrap();
        assert_eq!(back, m);
        let bad = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(io::read_manifest(bad.as_bytes()), Err(ManifestError::Format { line: 1, .. })));
    }
}
