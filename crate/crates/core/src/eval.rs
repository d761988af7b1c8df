//! ROC/AUC, per-type and per-axis breakdowns, and threshold selection.
//!
//! Anomalies are the positive class. AUC is the Mann–Whitney statistic with
//! ties counted as one half; it is computed from tie groups in sorted order
//! using exact integer pair counts, so it agrees bit-for-bit with the
//! pairwise definition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{AnomalyLabel, AnomalyLevel};
use crate::error::{Error, Result};
use crate::score::ScoredSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

fn check_scores(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Eval(format!(
            "AUC undefined with {} anomalous and {} normal samples",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::Eval("NaN score".into()));
    }
    Ok(())
}

/// Tie groups in ascending score order as `(score, positives, negatives)`.
fn tie_groups(pos: &[f64], neg: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|s| (*s, true)).chain(neg.iter().map(|s| (*s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for (s, is_pos) in all {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if is_pos {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, is_pos as u64, (!is_pos) as u64)),
        }
    }
    groups
}

/// AUC of positive (anomalous) against negative (normal) scores.
pub fn auc_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    // twice the Mann–Whitney U, an integer
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for (_, p, n) in tie_groups(pos, neg) {
        twice_u += 2 * p as u128 * neg_below + p as u128 * n as u128;
        neg_below += n as u128;
    }
    let pairs = 2 * pos.len() as u128 * neg.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

fn split_by_label(scored: &[ScoredSample]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in scored {
        if s.label.is_some() {
            pos.push(s.score);
        } else {
            neg.push(s.score);
        }
    }
    (pos, neg)
}

pub fn auc(scored: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = split_by_label(scored);
    auc_scores(&pos, &neg)
}

/// ROC points from the strictest threshold down: `(0, 0)` first, one point
/// per distinct score, ending at `(1, 1)`. A sample is flagged when its
/// score is `>= threshold`.
pub fn roc_curve_scores(pos: &[f64], neg: &[f64]) -> Result<Vec<RocPoint>> {
    check_scores(pos, neg)?;
    let (p_total, n_total) = (pos.len() as f64, neg.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        true_positive_rate: 0.0,
        false_positive_rate: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (s, p, n) in tie_groups(pos, neg).into_iter().rev() {
        tp += p;
        fp += n;
        points.push(RocPoint {
            threshold: s,
            true_positive_rate: tp as f64 / p_total,
            false_positive_rate: fp as f64 / n_total,
        });
    }
    Ok(points)
}

pub fn roc_curve(scored: &[ScoredSample]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = split_by_label(scored);
    roc_curve_scores(&pos, &neg)
}

/// Trapezoidal area under a ROC curve.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            (w[1].false_positive_rate - w[0].false_positive_rate) * (w[1].true_positive_rate + w[0].true_positive_rate) / 2.0
        })
        .sum()
}

/// Empirical `q`-quantile of validation scores, linearly interpolated
/// between order statistics (`q` in the open interval (0, 1)).
pub fn choose_threshold(val_scores: &[f64], q: f64) -> Result<f64> {
    if val_scores.is_empty() {
        return Err(Error::Eval("threshold needs at least one validation score".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile {q} must lie strictly between 0 and 1")));
    }
    if val_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Eval("non-finite validation score".into()));
    }
    let mut sorted = val_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAuc {
    pub auc: f64,
    pub anomalous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub quantile: f64,
    pub value: f64,
    /// Fraction of validation scores strictly above the threshold.
    pub val_false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_auc: f64,
    pub per_type: BTreeMap<String, GroupAuc>,
    /// Keys `level=sensory`, `level=semantic`, `geometric=yes|no`, `hazard=yes|no`.
    pub per_axis: BTreeMap<String, GroupAuc>,
    pub normal_count: usize,
    pub anomalous_count: usize,
    pub threshold: ThresholdSummary,
    pub warnings: Vec<String>,
}

fn axis_keys(label: &AnomalyLabel) -> [String; 3] {
    let yn = |b: bool| if b { "yes" } else { "no" };
    let level = match label.level {
        AnomalyLevel::Sensory => "sensory",
        AnomalyLevel::Semantic => "semantic",
    };
    [
        format!("level={level}"),
        format!("geometric={}", yn(label.geometric)),
        format!("hazard={}", yn(label.hazard)),
    ]
}

const ALL_AXIS_KEYS: [&str; 6] = [
    "level=sensory",
    "level=semantic",
    "geometric=yes",
    "geometric=no",
    "hazard=yes",
    "hazard=no",
];

/// Full breakdown of a scored test split. Every subgroup AUC is computed
/// against all normal test samples.
pub fn evaluate(
    test: &[ScoredSample],
    taxonomy: &BTreeMap<String, AnomalyLabel>,
    val_scores: &[f64],
    q: f64,
) -> Result<EvalReport> {
    let (pos, neg) = split_by_label(test);
    if pos.is_empty() {
        return Err(Error::Eval("test set has no anomalous samples".into()));
    }
    let overall_auc = auc_scores(&pos, &neg)?;
    let mut warnings = Vec::new();

    let mut by_type: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_axis: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in test {
        let Some(label) = &s.label else { continue };
        by_type.entry(label.anomaly_type.clone()).or_default().push(s.score);
        let axes_label = match taxonomy.get(&label.anomaly_type) {
            Some(t) => t,
            None => {
                warnings.push(format!("anomaly type {:?} missing from taxonomy; axes taken from the sample", label.anomaly_type));
                label
            }
        };
        for key in axis_keys(axes_label) {
            by_axis.entry(key).or_default().push(s.score);
        }
    }
    for t in taxonomy.keys() {
        if !by_type.contains_key(t) {
            warnings.push(format!("anomaly type {t:?} has no test samples; omitted"));
        }
    }
    for key in ALL_AXIS_KEYS {
        if !by_axis.contains_key(key) {
            warnings.push(format!("axis group {key} has no test samples; omitted"));
        }
    }
    warnings.dedup();

    let group = |scores: &Vec<f64>| -> Result<GroupAuc> {
        Ok(GroupAuc {
            auc: auc_scores(scores, &neg)?,
            anomalous: scores.len(),
        })
    };
    let per_type = by_type.iter().map(|(k, v)| Ok((k.clone(), group(v)?))).collect::<Result<_>>()?;
    let per_axis = by_axis.iter().map(|(k, v)| Ok((k.clone(), group(v)?))).collect::<Result<_>>()?;

    let tau = choose_threshold(val_scores, q)?;
    let fpr = val_scores.iter().filter(|s| **s > tau).count() as f64 / val_scores.len() as f64;
    Ok(EvalReport {
        overall_auc,
        per_type,
        per_axis,
        normal_count: neg.len(),
        anomalous_count: pos.len(),
        threshold: ThresholdSummary {
            quantile: q,
            value: tau,
            val_false_positive_rate: fpr,
        },
        warnings,
    })
}
