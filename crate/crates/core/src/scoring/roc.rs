//! Threshold sweep, area under the curve, and equal error rate.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Points of a descending threshold sweep. `thresholds[i]` produced
/// `points[i]`: a sample is called generated when `score >= threshold`.
/// The first threshold is `+inf` (nothing flagged).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    #[serde(serialize_with = "ser_thresholds", deserialize_with = "de_thresholds")]
    pub thresholds: Vec<f64>,
}

fn ser_thresholds<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    #[serde(untagged)]
    enum T {
        Finite(f64),
        Text(&'static str),
    }
    let items: Vec<T> = v
        .iter()
        .map(|&t| match t {
            t if t.is_finite() => T::Finite(t),
            t if t > 0.0 => T::Text("inf"),
            _ => T::Text("-inf"),
        })
        .collect();
    items.serialize(s)
}

fn de_thresholds<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum T {
        Finite(f64),
        Text(String),
    }
    Vec::<T>::deserialize(d)?
        .into_iter()
        .map(|t| match t {
            T::Finite(v) => Ok(v),
            T::Text(s) if s == "inf" => Ok(f64::INFINITY),
            T::Text(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            T::Text(s) => Err(serde::de::Error::custom(format!("bad threshold {s:?}"))),
        })
        .collect()
}

/// Sweep over the distinct scores, highest first; tied scores collapse to
/// one point. Returns `None` unless both classes are present.
/// `positive[i]` marks generated samples.
pub fn sweep(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
        thresholds.push(t);
    }
    Some(RocCurve { points, thresholds })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// Rate at which the false-positive rate equals the miss rate, linearly
/// interpolated on the segment where `fpr + tpr - 1` changes sign.
pub fn eer(curve: &RocCurve) -> f64 {
    let gap = |p: &RocPoint| p.fpr + p.tpr - 1.0;
    let pts = &curve.points;
    let Some(i) = pts.iter().position(|p| gap(p) >= 0.0) else {
        return pts.last().map_or(0.5, |p| (p.fpr + 1.0 - p.tpr) / 2.0);
    };
    if i == 0 || gap(&pts[i]) == 0.0 {
        return pts[i].fpr;
    }
    let (a, b) = (pts[i - 1], pts[i]);
    let alpha = -gap(&a) / (gap(&b) - gap(&a));
    a.fpr + alpha * (b.fpr - a.fpr)
}
