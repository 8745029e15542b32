use std::collections::{BTreeMap, BTreeSet};

use blindeval::manifest::{anonymize_sources, AudioRoots, AnonymizationMap};
use blindeval::scoring::{self, auc, eer, sweep, DecisionRecord, RocPoint};
use blindeval::{Label, Manifest, SampleRecord, SourceDescriptor, Split, Task, Variant};
use proptest::prelude::*;

/// Every candidate threshold, each scored in O(n).
fn oracle(scores: &[f64], positive: &[bool]) -> Vec<RocPoint> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.insert(0, f64::INFINITY);
    thresholds
        .iter()
        .map(|&t| {
            let tp = scores.iter().zip(positive).filter(|(&s, &p)| p && s >= t).count() as f64;
            let fp = scores.iter().zip(positive).filter(|(&s, &p)| !p && s >= t).count() as f64;
            RocPoint { fpr: fp / n_neg, tpr: tp / n_pos }
        })
        .collect()
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=200).prop_flat_map(|n| {
        (prop::collection::vec(0u32..40, n), prop::collection::vec(any::<bool>(), n)).prop_filter_map(
            "both classes",
            |(s, mut p)| {
                p[0] = true;
                p[1] = false;
                Some((s.into_iter().map(|v| v as f64 / 8.0).collect(), p))
            },
        )
    })
}

fn manifest(per_source: &[(Label, &str, usize)]) -> Manifest {
    let mut sources = Vec::new();
    let mut samples = Vec::new();
    for &(label, id, n) in per_source {
        sources.push(SourceDescriptor {
            source_id: id.into(),
            kind: label,
            display_name: format!("{id} Corpus"),
            native_sample_rate_hz: 16000,
            language: None,
            in_public_split: true,
            voice_cloning: None,
        });
        for i in 0..n {
            samples.push(SampleRecord {
                sample_id: format!("{id}-{i}"),
                source_id: id.into(),
                label,
                file_path: format!("{id}/{i}.wav"),
                duration_s: 1.0,
                sample_rate_hz: 16000,
                variant: Variant::original(),
                parent_sample_id: None,
            });
        }
    }
    Manifest { task: Task::Task1, split: Split::Private, seed: 0, roots: AudioRoots::default(), sources, samples }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sweep_matches_oracle((scores, positive) in labeled_scores()) {
        let curve = sweep(&scores, &positive).unwrap();
        prop_assert_eq!(&curve.points, &oracle(&scores, &positive));
        prop_assert!(curve.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
        prop_assert_eq!(curve.points.first().copied(), Some(RocPoint { fpr: 0.0, tpr: 0.0 }));
        prop_assert_eq!(curve.points.last().copied(), Some(RocPoint { fpr: 1.0, tpr: 1.0 }));
    }

    #[test]
    fn monotone_transform_preserves_curve((scores, positive) in labeled_scores()) {
        let a = sweep(&scores, &positive).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() * 3.0 - 11.0).collect();
        let b = sweep(&warped, &positive).unwrap();
        prop_assert_eq!(&a.points, &b.points);
        prop_assert_eq!(auc(&a), auc(&b));
        prop_assert_eq!(eer(&a), eer(&b));
    }

    #[test]
    fn eer_lies_on_curve((scores, positive) in labeled_scores()) {
        let e = eer(&sweep(&scores, &positive).unwrap());
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn confusion_matches_recount(decisions in prop::collection::vec(any::<bool>(), 40), split in 1usize..39) {
        let m = manifest(&[(Label::Generated, "g", split), (Label::Real, "r", 40 - split)]);
        let records: Vec<DecisionRecord> = m.samples.iter().zip(&decisions).map(|(s, &d)| DecisionRecord {
            sample_id: s.sample_id.clone(),
            decision: if d { Label::Generated } else { Label::Real },
            score: 0.0,
            inference_time_s: 0.0,
        }).collect();
        let c = scoring::confusion(&records, &m);
        let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
        for (s, &d) in m.samples.iter().zip(&decisions) {
            match (s.label, d) {
                (Label::Generated, true) => tp += 1,
                (Label::Generated, false) => fn_ += 1,
                (Label::Real, false) => tn += 1,
                (Label::Real, true) => fp += 1,
            }
        }
        prop_assert_eq!((c.tp, c.fn_, c.tn, c.fp), (tp, fn_, tn, fp));
        let bac = scoring::balanced_accuracy(&c).unwrap();
        prop_assert_eq!(bac, (c.tpr().unwrap() + c.tnr().unwrap()) / 2.0);
    }

    #[test]
    fn equal_counts_average_to_overall(
        per in 1usize..12,
        n_gen in 1usize..6,
        n_real in 1usize..6,
        seed in any::<u64>(),
    ) {
        let gen_ids: Vec<String> = (0..n_gen).map(|i| format!("g{i}")).collect();
        let real_ids: Vec<String> = (0..n_real).map(|i| format!("r{i}")).collect();
        let spec: Vec<(Label, &str, usize)> = gen_ids.iter().map(|g| (Label::Generated, g.as_str(), per))
            .chain(real_ids.iter().map(|r| (Label::Real, r.as_str(), per)))
            .collect();
        let m = manifest(&spec);
        let mut state = seed;
        let records: Vec<DecisionRecord> = m.samples.iter().map(|s| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            DecisionRecord {
                sample_id: s.sample_id.clone(),
                decision: if state >> 63 == 1 { Label::Generated } else { Label::Real },
                score: (state >> 11) as f64,
                inference_time_s: 0.0,
            }
        }).collect();
        let c = scoring::confusion(&records, &m);
        let (tpr, tnr) = (c.tpr().unwrap(), c.tnr().unwrap());
        let overall = (tpr + tnr) / 2.0;
        let gen_mean = gen_ids.iter()
            .map(|g| scoring::conditioned_bac_generated(&records, &m, g, tnr).unwrap())
            .sum::<f64>() / n_gen as f64;
        let real_mean = real_ids.iter()
            .map(|r| scoring::conditioned_bac_real(&records, &m, r, tpr).unwrap())
            .sum::<f64>() / n_real as f64;
        prop_assert!((gen_mean - overall).abs() < 1e-12);
        prop_assert!((real_mean - overall).abs() < 1e-12);
    }

    #[test]
    fn anonymization_is_injective(n in 1usize..60, salt in prop::collection::vec(any::<u8>(), 1..16)) {
        let ids: Vec<String> = (0..n).map(|i| format!("source_{i}")).collect();
        let spec: Vec<(Label, &str, usize)> = ids.iter().enumerate()
            .map(|(i, id)| (if i % 2 == 0 { Label::Real } else { Label::Generated }, id.as_str(), 1))
            .collect();
        let map = anonymize_sources(&manifest(&spec), &salt);
        let values: BTreeSet<&String> = map.entries.values().collect();
        prop_assert_eq!(values.len(), n);
        prop_assert!(map.entries.values().all(|p| AnonymizationMap::is_pseudonym(p)));
    }
}

#[test]
fn report_keys_follow_anonymization() {
    let m = manifest(&[(Label::Generated, "g1", 4), (Label::Real, "r1", 4)]);
    let records: Vec<DecisionRecord> = m
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| DecisionRecord {
            sample_id: s.sample_id.clone(),
            decision: s.label,
            score: i as f64,
            inference_time_s: 1.0,
        })
        .collect();
    let anon = anonymize_sources(&m, b"k");
    let report = scoring::full_report(&records, &m, Some(&anon)).unwrap();
    let keys: BTreeMap<_, _> = report.per_generated_source.iter().chain(&report.per_real_source).collect();
    assert!(keys.keys().all(|k| AnonymizationMap::is_pseudonym(k)));
    assert!(!report.to_json().contains("Corpus"));
}
