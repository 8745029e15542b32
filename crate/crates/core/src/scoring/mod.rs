//! Submission parsing and the metric suite: rates, balanced accuracy,
//! per-source and per-variant conditioned BAC, ROC/AUC and EER.
//!
//! The positive class is `generated`. Scores are oriented so that higher
//! means more likely generated. BAC uses the submitted binary decisions;
//! ROC and EER use the scores.

mod roc;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{AnonymizationMap, Label, Manifest, SampleRecord, Split, Task};

pub use roc::{auc, eer, sweep, RocCurve, RocPoint};

pub const REPORT_FORMAT: &str = "blindeval-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("submission is missing {} sample(s): {}", .0.len(), .0.join(", "))]
    MissingSample(Vec<String>),
    #[error("submission names {} unknown sample(s): {}", .0.len(), .0.join(", "))]
    UnknownSample(Vec<String>),
    #[error("submission repeats {} sample(s): {}", .0.len(), .0.join(", "))]
    DuplicateSample(Vec<String>),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("non-finite score at line {line}")]
    NonFiniteScore { line: u64 },
    #[error("no {0} samples were scored; the class rate is undefined")]
    UndefinedClassRate(String),
    #[error("no pseudonym for source {0}")]
    MissingPseudonym(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub sample_id: String,
    pub decision: Label,
    pub score: f64,
    pub inference_time_s: f64,
}

const COLUMNS: [&str; 4] = ["file", "decision", "score", "inference_time_s"];

/// `file` may be a sample id, the staged file name `<sample_id>.wav`, or a
/// path ending in it.
fn sample_id_of(file: &str) -> &str {
    let name = file.rsplit(['/', '\\']).next().unwrap_or(file);
    name.strip_suffix(".wav").or_else(|| name.strip_suffix(".WAV")).unwrap_or(name)
}

/// Decision tokens are trimmed and lowercased before matching.
fn canonical_decision(raw: &str) -> Option<Label> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "real" => Some(Label::Real),
        "generated" => Some(Label::Generated),
        _ => None,
    }
}

/// Parse a submission against `m`: CSV with header
/// `file,decision,score,inference_time_s`, exactly one row per sample.
pub fn parse_submission_from<R: Read>(input: R, m: &Manifest) -> Result<Vec<DecisionRecord>, ScoringError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(input);
    let headers = reader.headers().map_err(|e| ScoringError::MalformedRow { line: 1, reason: e.to_string() })?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| ScoringError::MalformedRow {
            line: 1,
            reason: format!("header must contain {}", COLUMNS.join(",")),
        })
    };
    let idx = [col(COLUMNS[0])?, col(COLUMNS[1])?, col(COLUMNS[2])?, col(COLUMNS[3])?];

    let known: HashMap<&str, &SampleRecord> = m.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut seen = BTreeSet::new();
    let (mut unknown, mut duplicate) = (BTreeSet::new(), BTreeSet::new());
    let mut records = Vec::with_capacity(m.samples.len());
    for row in reader.records() {
        let row = row.map_err(|e| ScoringError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(idx[i]).unwrap_or("");
        let sample_id = sample_id_of(field(0).trim()).to_string();
        let raw_decision = field(1);
        let decision = canonical_decision(raw_decision).ok_or_else(|| ScoringError::MalformedRow {
            line,
            reason: format!("decision {raw_decision:?} is neither real nor generated"),
        })?;
        if raw_decision != decision.as_str() {
            tracing::info!(line, raw = raw_decision, "canonicalized decision token");
        }
        let score: f64 = field(2)
            .trim()
            .parse()
            .map_err(|_| ScoringError::MalformedRow { line, reason: format!("score {:?} is not a number", field(2)) })?;
        if !score.is_finite() {
            return Err(ScoringError::NonFiniteScore { line });
        }
        let inference_time_s: f64 = field(3).trim().parse().map_err(|_| ScoringError::MalformedRow {
            line,
            reason: format!("inference_time_s {:?} is not a number", field(3)),
        })?;
        if !(inference_time_s.is_finite() && inference_time_s >= 0.0) {
            return Err(ScoringError::MalformedRow { line, reason: "inference_time_s must be finite and >= 0".into() });
        }
        if !known.contains_key(sample_id.as_str()) {
            unknown.insert(sample_id);
            continue;
        }
        if !seen.insert(sample_id.clone()) {
            duplicate.insert(sample_id);
            continue;
        }
        records.push(DecisionRecord { sample_id, decision, score, inference_time_s });
    }
    if !unknown.is_empty() {
        return Err(ScoringError::UnknownSample(unknown.into_iter().collect()));
    }
    if !duplicate.is_empty() {
        return Err(ScoringError::DuplicateSample(duplicate.into_iter().collect()));
    }
    let mut missing: Vec<String> =
        m.samples.iter().filter(|s| !seen.contains(&s.sample_id)).map(|s| s.sample_id.clone()).collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(ScoringError::MissingSample(missing));
    }
    Ok(records)
}

pub fn parse_submission(path: &Path, m: &Manifest) -> Result<Vec<DecisionRecord>, ScoringError> {
    let file = std::fs::File::open(path).map_err(|e| ScoringError::Io(format!("{}: {e}", path.display())))?;
    parse_submission_from(file, m)
}

/// Write records in the submission format.
pub fn write_submission<W: std::io::Write>(records: &[DecisionRecord], out: W) -> Result<(), ScoringError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| ScoringError::Io(e.to_string());
    w.write_record(COLUMNS).map_err(io)?;
    for r in records {
        w.write_record([
            format!("{}.wav", r.sample_id),
            r.decision.as_str().to_string(),
            r.score.to_string(),
            r.inference_time_s.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| ScoringError::Io(e.to_string()))
}

/// Records whose sample belongs to `m`, e.g. the public part of a
/// submission made on the full dataset.
pub fn restrict(records: &[DecisionRecord], m: &Manifest) -> Vec<DecisionRecord> {
    let ids: BTreeSet<&str> = m.samples.iter().map(|s| s.sample_id.as_str()).collect();
    records.iter().filter(|r| ids.contains(r.sample_id.as_str())).cloned().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, truth: Label, decision: Label) {
        match (truth, decision) {
            (Label::Generated, Label::Generated) => self.tp += 1,
            (Label::Generated, Label::Real) => self.fn_ += 1,
            (Label::Real, Label::Real) => self.tn += 1,
            (Label::Real, Label::Generated) => self.fp += 1,
        }
    }

    pub fn tpr(&self) -> Result<f64, ScoringError> {
        match self.tp + self.fn_ {
            0 => Err(ScoringError::UndefinedClassRate("generated".into())),
            n => Ok(self.tp as f64 / n as f64),
        }
    }

    pub fn tnr(&self) -> Result<f64, ScoringError> {
        match self.tn + self.fp {
            0 => Err(ScoringError::UndefinedClassRate("real".into())),
            n => Ok(self.tn as f64 / n as f64),
        }
    }
}

fn lookup<'a>(m: &'a Manifest) -> HashMap<&'a str, &'a SampleRecord> {
    m.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect()
}

/// Confusion counts over the records whose sample is in `m` and passes
/// `filter`.
pub fn confusion_where(
    records: &[DecisionRecord],
    m: &Manifest,
    filter: impl Fn(&SampleRecord) -> bool,
) -> ConfusionCounts {
    let index = lookup(m);
    let mut c = ConfusionCounts::default();
    for r in records {
        if let Some(s) = index.get(r.sample_id.as_str()).filter(|s| filter(s)) {
            c.add(s.label, r.decision);
        }
    }
    c
}

pub fn confusion(records: &[DecisionRecord], m: &Manifest) -> ConfusionCounts {
    confusion_where(records, m, |_| true)
}

pub fn balanced_accuracy(c: &ConfusionCounts) -> Result<f64, ScoringError> {
    Ok((c.tpr()? + c.tnr()?) / 2.0)
}

/// `(TPR on one generated source + global TNR) / 2`.
pub fn conditioned_bac_generated(
    records: &[DecisionRecord],
    m: &Manifest,
    source_id: &str,
    global_tnr: f64,
) -> Result<f64, ScoringError> {
    let c = confusion_where(records, m, |s| s.source_id == source_id && s.label == Label::Generated);
    Ok((c.tpr().map_err(|_| ScoringError::UndefinedClassRate(source_id.into()))? + global_tnr) / 2.0)
}

/// `(global TPR + TNR on one real source) / 2`.
pub fn conditioned_bac_real(
    records: &[DecisionRecord],
    m: &Manifest,
    source_id: &str,
    global_tpr: f64,
) -> Result<f64, ScoringError> {
    let c = confusion_where(records, m, |s| s.source_id == source_id && s.label == Label::Real);
    Ok((global_tpr + c.tnr().map_err(|_| ScoringError::UndefinedClassRate(source_id.into()))?) / 2.0)
}

/// `(TPR on generated samples of one variant + global TNR) / 2`.
pub fn conditioned_bac_variant(
    records: &[DecisionRecord],
    m: &Manifest,
    variant: &str,
    global_tnr: f64,
) -> Result<f64, ScoringError> {
    let c = confusion_where(records, m, |s| s.variant.as_str() == variant && s.label == Label::Generated);
    Ok((c.tpr().map_err(|_| ScoringError::UndefinedClassRate(variant.into()))? + global_tnr) / 2.0)
}

pub fn roc_curve(records: &[DecisionRecord], m: &Manifest) -> Result<RocCurve, ScoringError> {
    let index = lookup(m);
    let (scores, positive): (Vec<f64>, Vec<bool>) = records
        .iter()
        .filter_map(|r| index.get(r.sample_id.as_str()).map(|s| (r.score, s.label == Label::Generated)))
        .unzip();
    sweep(&scores, &positive).ok_or_else(|| {
        let missing = if positive.iter().any(|&p| p) { "real" } else { "generated" };
        ScoringError::UndefinedClassRate(missing.into())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub tnr: f64,
    pub bac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub split: Split,
    pub anonymized: bool,
    pub counts: ConfusionCounts,
    pub overall: Rates,
    /// `(fpr, tpr)` implied by the submitted decisions.
    pub operating_point: RocPoint,
    pub per_generated_source: BTreeMap<String, f64>,
    pub per_real_source: BTreeMap<String, f64>,
    /// Conditioned BAC per generated-sample variant (`original` or an
    /// operator / technique id).
    pub per_variant: BTreeMap<String, f64>,
    pub roc: RocCurve,
    pub auc: f64,
    pub eer: f64,
    pub bac_at_eer: f64,
    pub mean_inference_time_s: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Assemble every metric for the records of `m`'s samples. With `anon`,
/// every per-source key is a pseudonym.
pub fn full_report(
    records: &[DecisionRecord],
    m: &Manifest,
    anon: Option<&AnonymizationMap>,
) -> Result<MetricsReport, ScoringError> {
    let records = restrict(records, m);
    let counts = confusion(&records, m);
    let (tpr, tnr) = (counts.tpr()?, counts.tnr()?);
    let key = |source_id: &str| -> Result<String, ScoringError> {
        match anon {
            None => Ok(source_id.to_string()),
            Some(map) => map
                .pseudonym(source_id)
                .map(str::to_string)
                .ok_or_else(|| ScoringError::MissingPseudonym(source_id.to_string())),
        }
    };
    let index = lookup(m);
    let scored: BTreeSet<(&str, Label)> = records
        .iter()
        .filter_map(|r| index.get(r.sample_id.as_str()))
        .map(|s| (s.source_id.as_str(), s.label))
        .collect();
    let mut per_generated_source = BTreeMap::new();
    let mut per_real_source = BTreeMap::new();
    for &(source_id, label) in &scored {
        match label {
            Label::Generated => {
                per_generated_source.insert(key(source_id)?, conditioned_bac_generated(&records, m, source_id, tnr)?);
            }
            Label::Real => {
                per_real_source.insert(key(source_id)?, conditioned_bac_real(&records, m, source_id, tpr)?);
            }
        }
    }
    let variants: BTreeSet<&str> = records
        .iter()
        .filter_map(|r| index.get(r.sample_id.as_str()))
        .filter(|s| s.label == Label::Generated)
        .map(|s| s.variant.as_str())
        .collect();
    let per_variant = variants
        .into_iter()
        .map(|v| Ok((v.to_string(), conditioned_bac_variant(&records, m, v, tnr)?)))
        .collect::<Result<_, ScoringError>>()?;
    let roc = roc_curve(&records, m)?;
    let (area, e) = (auc(&roc), eer(&roc));
    Ok(MetricsReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        task: m.task,
        split: m.split,
        anonymized: anon.is_some(),
        counts,
        overall: Rates { tpr, tnr, bac: (tpr + tnr) / 2.0 },
        operating_point: RocPoint { fpr: 1.0 - tnr, tpr },
        per_generated_source,
        per_real_source,
        per_variant,
        roc,
        auc: area,
        eer: e,
        bac_at_eer: 1.0 - e,
        mean_inference_time_s: records.iter().map(|r| r.inference_time_s).sum::<f64>() / records.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::testutil::synthetic;
    use crate::manifest::{anonymize_sources, project_public};

    fn all_correct(m: &Manifest) -> Vec<DecisionRecord> {
        m.samples
            .iter()
            .map(|s| DecisionRecord {
                sample_id: s.sample_id.clone(),
                decision: s.label,
                score: if s.label == Label::Generated { 0.9 } else { 0.1 },
                inference_time_s: 0.5,
            })
            .collect()
    }

    fn csv_of(records: &[DecisionRecord]) -> String {
        let mut out = Vec::new();
        write_submission(records, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    fn fixture() -> Manifest {
        synthetic(&[("r1", true), ("r2", false)], &[("g1", true), ("g2", false)], 5)
    }

    #[test]
    fn well_formed_round_trip() {
        let m = fixture();
        let recs = all_correct(&m);
        let parsed = parse_submission_from(csv_of(&recs).as_bytes(), &m).unwrap();
        assert_eq!(parsed.len(), m.samples.len());
    }

    #[test]
    fn missing_unknown_duplicate() {
        let m = fixture();
        let recs = all_correct(&m);
        let mut gone: Vec<String> = recs[..3].iter().map(|r| r.sample_id.clone()).collect();
        gone.sort();
        assert_eq!(parse_submission_from(csv_of(&recs[3..]).as_bytes(), &m), Err(ScoringError::MissingSample(gone)));

        let mut extra = recs.clone();
        extra.push(DecisionRecord { sample_id: "sdeadbeef".into(), ..recs[0].clone() });
        assert_eq!(
            parse_submission_from(csv_of(&extra).as_bytes(), &m),
            Err(ScoringError::UnknownSample(vec!["sdeadbeef".into()]))
        );
        let mut dup = recs.clone();
        dup.push(recs[1].clone());
        assert_eq!(
            parse_submission_from(csv_of(&dup).as_bytes(), &m),
            Err(ScoringError::DuplicateSample(vec![recs[1].sample_id.clone()]))
        );
    }

    #[test]
    fn canonicalizes_decision_tokens_and_paths() {
        let m = synthetic(&[("r", true)], &[("g", true)], 1);
        let (r, g) = (&m.samples[0].sample_id, &m.samples[1].sample_id);
        let text = format!("file,decision,score,inference_time_s\n/data/{r}.wav, Real ,0.1,0.2\n{g},Generated ,0.8,0.1\n");
        let recs = parse_submission_from(text.as_bytes(), &m).unwrap();
        assert_eq!(recs[0].decision, Label::Real);
        assert_eq!(recs[1].decision, Label::Generated);
    }

    #[test]
    fn malformed_rows() {
        let m = synthetic(&[("r", true)], &[("g", true)], 1);
        let r = &m.samples[0].sample_id;
        let bad = |body: &str| parse_submission_from(format!("file,decision,score,inference_time_s\n{body}\n").as_bytes(), &m);
        assert!(matches!(bad(&format!("{r},maybe,0.1,0.1")), Err(ScoringError::MalformedRow { line: 2, .. })));
        assert!(matches!(bad(&format!("{r},real,abc,0.1")), Err(ScoringError::MalformedRow { line: 2, .. })));
        assert_eq!(bad(&format!("{r},real,NaN,0.1")), Err(ScoringError::NonFiniteScore { line: 2 }));
        assert_eq!(bad(&format!("{r},real,inf,0.1")), Err(ScoringError::NonFiniteScore { line: 2 }));
        assert!(matches!(bad(&format!("{r},real,0.1,-1")), Err(ScoringError::MalformedRow { .. })));
        assert!(matches!(
            parse_submission_from("file,decision\nx,real\n".as_bytes(), &m),
            Err(ScoringError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn constant_classifier() {
        let m = fixture();
        let recs: Vec<_> = all_correct(&m).into_iter().map(|r| DecisionRecord { decision: Label::Generated, ..r }).collect();
        let c = confusion(&recs, &m);
        assert_eq!((c.tpr().unwrap(), c.tnr().unwrap()), (1.0, 0.0));
        assert_eq!(balanced_accuracy(&c).unwrap(), 0.5);
        let perfect = confusion(&all_correct(&m), &m);
        assert_eq!((perfect.fn_, perfect.fp), (0, 0));
    }

    #[test]
    fn empty_class_is_undefined() {
        let m = synthetic(&[], &[("g", true)], 3);
        assert!(matches!(full_report(&all_correct(&m), &m, None), Err(ScoringError::UndefinedClassRate(_))));
    }

    #[test]
    fn anonymized_report_has_no_names() {
        let m = project_public(&fixture());
        let anon = anonymize_sources(&m, b"salt");
        let report = full_report(&all_correct(&fixture()), &m, Some(&anon)).unwrap();
        let text = report.to_json();
        for s in &fixture().sources {
            assert!(!text.contains(&s.display_name));
            assert!(!text.contains(&format!("\"{}\"", s.source_id)));
        }
        assert!(report.per_generated_source.keys().all(|k| AnonymizationMap::is_pseudonym(k)));
        assert_eq!(report.counts.tp + report.counts.tn, 10);
    }

    #[test]
    fn report_is_deterministic() {
        let m = fixture();
        let a = full_report(&all_correct(&m), &m, None).unwrap().to_json();
        let b = full_report(&all_correct(&m), &m, None).unwrap().to_json();
        assert_eq!(a, b);
        let back: MetricsReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back.to_json(), a);
    }
}
