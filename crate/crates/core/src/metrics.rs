//! Detector evaluation: tie-aware ROC-AUC, clamped cross-entropy and ROC
//! curve export.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLAMP: f64 = 1e-7;

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::InvalidLabel(other as i64)),
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Indices sorted by ascending score.
fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    idx
}

/// Area under the ROC curve via the Mann-Whitney rank-sum, with tied pairs
/// counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;
    let order = argsort(scores);

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their average
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean binary cross-entropy with probabilities clipped to `[clamp, 1 - clamp]`.
pub fn cross_entropy(probs: &[f64], labels: &[u8], clamp: f64) -> Result<f64> {
    check_lengths(probs, labels)?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(clamp, 1.0 - clamp);
        total += match y {
            1 => -p.ln(),
            0 => -(1.0 - p).ln(),
            other => return Err(Error::InvalidLabel(other as i64)),
        };
    }
    Ok(total / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC staircase from (0,0) to (1,1), one vertex per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;
    let mut order = argsort(scores);
    order.reverse();

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
        i = j;
    }
    Ok(points)
}

/// Trapezoidal area under a sequence of ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ce: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub clamp: f64,
}

/// AUC and cross-entropy of predicted poisoning probabilities.
pub fn evaluate(probs: &[f64], labels: &[u8], clamp: f64) -> Result<EvalReport> {
    let (n_pos, n_neg) = class_counts(labels)?;
    Ok(EvalReport {
        auc: roc_auc(probs, labels)?,
        ce: cross_entropy(probs, labels, clamp)?,
        n_pos,
        n_neg,
        clamp,
    })
}

/// Writes `fpr,tpr` rows with a header line.
pub fn write_roc_csv(path: impl AsRef<Path>, points: &[RocPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics_json<T: Serialize>(path: impl AsRef<Path>, report: &T) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(path, e))
}
