use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::{io::sample_line, project_public, Label, Manifest, SampleRecord, Split, Task};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateSourceId { source_id: String },
    DuplicateSampleId { sample_id: String },
    UnknownSource { sample_id: String, source_id: String },
    LabelMismatch { sample_id: String },
    RealVoiceCloning { source_id: String },
    RealSampleModified { sample_id: String },
    MissingParent { sample_id: String },
    UnexpectedParent { sample_id: String },
    DanglingParent { sample_id: String, parent_sample_id: String },
    BadParent { sample_id: String, parent_sample_id: String },
    Imbalanced { source_id: String, found: usize, expected: usize },
    VariantCount { source_id: String, variant: String, found: usize, expected: usize },
    OriginalInLaunderedSet { sample_id: String },
    BadAudioFields { sample_id: String },
    NotPublicSplit,
    MissingFromPublic { sample_id: String },
    NotInPrivate { sample_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSourceId { source_id } => write!(f, "duplicate source id {source_id}"),
            Violation::DuplicateSampleId { sample_id } => write!(f, "duplicate sample id {sample_id}"),
            Violation::UnknownSource { sample_id, source_id } => {
                write!(f, "sample {sample_id} references unknown source {source_id}")
            }
            Violation::LabelMismatch { sample_id } => write!(f, "sample {sample_id} label differs from its source kind"),
            Violation::RealVoiceCloning { source_id } => write!(f, "real source {source_id} carries voice_cloning"),
            Violation::RealSampleModified { sample_id } => write!(f, "real sample {sample_id} is not an original"),
            Violation::MissingParent { sample_id } => write!(f, "derived sample {sample_id} has no parent"),
            Violation::UnexpectedParent { sample_id } => write!(f, "original sample {sample_id} has a parent"),
            Violation::DanglingParent { sample_id, parent_sample_id } => {
                write!(f, "sample {sample_id} parent {parent_sample_id} is not in the manifest")
            }
            Violation::BadParent { sample_id, parent_sample_id } => {
                write!(f, "sample {sample_id} parent {parent_sample_id} is not an original of the same source")
            }
            Violation::Imbalanced { source_id, found, expected } => {
                write!(f, "source {source_id} has {found} samples, expected {expected}")
            }
            Violation::VariantCount { source_id, variant, found, expected } => {
                write!(f, "source {source_id} variant {variant} has {found} samples, expected {expected}")
            }
            Violation::OriginalInLaunderedSet { sample_id } => {
                write!(f, "generated original {sample_id} in a laundering manifest")
            }
            Violation::BadAudioFields { sample_id } => write!(f, "sample {sample_id} has invalid duration or rate"),
            Violation::NotPublicSplit => write!(f, "paired manifest is not a public split"),
            Violation::MissingFromPublic { sample_id } => write!(f, "public sample {sample_id} missing from public manifest"),
            Violation::NotInPrivate { sample_id } => write!(f, "public manifest sample {sample_id} not in private projection"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn mode(counts: impl Iterator<Item = usize>) -> Option<usize> {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for c in counts {
        *freq.entry(c).or_default() += 1;
    }
    // highest frequency wins; ties resolve to the larger count
    freq.into_iter().max_by_key(|&(count, f)| (f, count)).map(|(c, _)| c)
}

fn check_balance(counts: &BTreeMap<&str, usize>, out: &mut Vec<Violation>) {
    if let Some(expected) = mode(counts.values().copied()) {
        for (id, &found) in counts {
            if found != expected {
                out.push(Violation::Imbalanced { source_id: id.to_string(), found, expected });
            }
        }
    }
}

/// Check every manifest invariant. When `public` is given, also check that it
/// is exactly the public projection of `m`.
pub fn validate_manifest(m: &Manifest, public: Option<&Manifest>) -> ValidationReport {
    let mut v = Vec::new();

    let mut seen_sources = HashSet::new();
    for s in &m.sources {
        if !seen_sources.insert(s.source_id.as_str()) {
            v.push(Violation::DuplicateSourceId { source_id: s.source_id.clone() });
        }
        if s.kind == Label::Real && s.voice_cloning.is_some() {
            v.push(Violation::RealVoiceCloning { source_id: s.source_id.clone() });
        }
    }

    let by_id: HashMap<&str, &SampleRecord> = m.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut seen_samples = HashSet::new();
    for s in &m.samples {
        if !seen_samples.insert(s.sample_id.as_str()) {
            v.push(Violation::DuplicateSampleId { sample_id: s.sample_id.clone() });
        }
        match m.source(&s.source_id) {
            None => v.push(Violation::UnknownSource { sample_id: s.sample_id.clone(), source_id: s.source_id.clone() }),
            Some(src) if src.kind != s.label => v.push(Violation::LabelMismatch { sample_id: s.sample_id.clone() }),
            _ => {}
        }
        if !(s.duration_s >= 0.0 && s.duration_s.is_finite()) || s.sample_rate_hz == 0 {
            v.push(Violation::BadAudioFields { sample_id: s.sample_id.clone() });
        }
        if s.label == Label::Real && !s.variant.is_original() {
            v.push(Violation::RealSampleModified { sample_id: s.sample_id.clone() });
        }
        match (&s.parent_sample_id, s.variant.is_original()) {
            (Some(_), true) => v.push(Violation::UnexpectedParent { sample_id: s.sample_id.clone() }),
            (None, false) => v.push(Violation::MissingParent { sample_id: s.sample_id.clone() }),
            (Some(parent), false) => match by_id.get(parent.as_str()) {
                Some(p) if !p.variant.is_original() || p.source_id != s.source_id => v.push(Violation::BadParent {
                    sample_id: s.sample_id.clone(),
                    parent_sample_id: parent.clone(),
                }),
                Some(_) => {}
                // laundering manifests replace their parents, so parents are external there
                None if m.task != Task::Task3 => v.push(Violation::DanglingParent {
                    sample_id: s.sample_id.clone(),
                    parent_sample_id: parent.clone(),
                }),
                None => {}
            },
            (None, true) => {}
        }
    }

    let count_for = |kind: Label| -> BTreeMap<&str, usize> {
        m.sources.iter().filter(|s| s.kind == kind).map(|s| (s.source_id.as_str(), m.samples_of(&s.source_id).count())).collect()
    };
    match m.task {
        Task::Task1 => {
            let mut all = count_for(Label::Real);
            all.extend(count_for(Label::Generated));
            check_balance(&all, &mut v);
        }
        Task::Task2 | Task::Task3 => {
            check_balance(&count_for(Label::Real), &mut v);
            check_balance(&count_for(Label::Generated), &mut v);
            for src in m.sources.iter().filter(|s| s.kind == Label::Generated) {
                check_variant_structure(m, &src.source_id, &mut v);
            }
        }
    }

    if let Some(p) = public {
        if p.split != Split::Public {
            v.push(Violation::NotPublicSplit);
        }
        let expected: HashSet<String> = project_public(m).samples.iter().map(sample_line).collect();
        let actual: HashSet<String> = p.samples.iter().map(sample_line).collect();
        for s in project_public(m).samples.iter().filter(|s| !actual.contains(&sample_line(s))) {
            v.push(Violation::MissingFromPublic { sample_id: s.sample_id.clone() });
        }
        for s in p.samples.iter().filter(|s| !expected.contains(&sample_line(s))) {
            v.push(Violation::NotInPrivate { sample_id: s.sample_id.clone() });
        }
    }

    ValidationReport { violations: v }
}

fn check_variant_structure(m: &Manifest, source_id: &str, v: &mut Vec<Violation>) {
    let group: Vec<&SampleRecord> = m.samples_of(source_id).collect();
    let originals = group.iter().filter(|s| s.variant.is_original()).count();
    let mut per_variant: BTreeMap<&str, usize> = BTreeMap::new();
    for s in group.iter().filter(|s| !s.variant.is_original()) {
        *per_variant.entry(s.variant.as_str()).or_default() += 1;
    }
    match m.task {
        Task::Task2 => {
            for (variant, &found) in &per_variant {
                if found != originals {
                    v.push(Violation::VariantCount {
                        source_id: source_id.to_string(),
                        variant: variant.to_string(),
                        found,
                        expected: originals,
                    });
                }
            }
        }
        Task::Task3 => {
            for s in group.iter().filter(|s| s.variant.is_original()) {
                v.push(Violation::OriginalInLaunderedSet { sample_id: s.sample_id.clone() });
            }
            if let Some(expected) = mode(per_variant.values().copied()) {
                for (variant, &found) in &per_variant {
                    if found != expected {
                        v.push(Violation::VariantCount {
                            source_id: source_id.to_string(),
                            variant: variant.to_string(),
                            found,
                            expected,
                        });
                    }
                }
            }
        }
        Task::Task1 => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::testutil::synthetic;
    use crate::manifest::Variant;

    #[test]
    fn underfilled_source_is_named() {
        let mut m = synthetic(&[("a", true), ("b", true)], &[("g", true)], 200);
        let idx = m.samples.iter().position(|s| s.source_id == "b").unwrap();
        m.samples.remove(idx);
        let r = validate_manifest(&m, None);
        assert_eq!(r.violations, vec![Violation::Imbalanced { source_id: "b".into(), found: 199, expected: 200 }]);
    }

    #[test]
    fn derived_without_parent_is_lineage_violation() {
        let mut m = synthetic(&[("a", true)], &[("g", true)], 2);
        m.task = Task::Task2;
        m.samples[3].variant = Variant::new("noise");
        let r = validate_manifest(&m, None);
        assert!(r.violations.contains(&Violation::MissingParent { sample_id: m.samples[3].sample_id.clone() }));
    }

    #[test]
    fn label_and_duplicate_checks() {
        let mut m = synthetic(&[("a", true)], &[("g", true)], 2);
        m.samples[0].label = Label::Generated;
        m.samples[1].sample_id = m.samples[2].sample_id.clone();
        m.sources[0].voice_cloning = Some(false);
        let r = validate_manifest(&m, None);
        assert!(r.violations.iter().any(|x| matches!(x, Violation::LabelMismatch { .. })));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::DuplicateSampleId { .. })));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::RealVoiceCloning { .. })));
    }

    #[test]
    fn public_pairing() {
        let m = synthetic(&[("a", true), ("b", false)], &[("g", true)], 2);
        let p = project_public(&m);
        assert!(validate_manifest(&m, Some(&p)).is_valid());
        let mut tampered = p.clone();
        tampered.samples[0].duration_s += 1.0;
        let r = validate_manifest(&m, Some(&tampered));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::NotInPrivate { .. })));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::MissingFromPublic { .. })));
        let r = validate_manifest(&m, Some(&m));
        assert!(r.violations.contains(&Violation::NotPublicSplit));
    }
}
