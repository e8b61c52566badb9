//! Univariate weight ranking and per-tensor generalization ranking.
//!
//! A weight's score is `sigma = |AUC - 0.5|` where the raw column is used
//! directly as the detection statistic. A one-dimensional logistic model is
//! a monotone map of its input, so its AUC is either the raw AUC or one
//! minus it, and `sigma` is the same either way.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::logreg::{train_logreg, LogRegOptions};
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::preprocess::{build_feature_matrix, FeatureIndex, FeatureMatrix, PreprocessConfig};
use crate::split::random_split;
use crate::weight_store::{ArchitectureSignature, ModelWeights};

pub const DEFAULT_WEIGHT_K: usize = 1000;
pub const DEFAULT_TENSOR_K: usize = 25;
/// Regularization used for the per-tensor probe classifiers.
pub const TENSOR_PROBE_P: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    #[serde(flatten)]
    pub index: FeatureIndex,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorScore {
    pub tensor_name: String,
    pub mean_validation_auc: f64,
    pub n_splits: usize,
}

fn check_labels(x: &FeatureMatrix, y: &[u8]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows for {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// `|AUC - 0.5|` of every column, in column order.
pub fn column_sigmas(x: &FeatureMatrix, y: &[u8]) -> Result<Vec<f64>> {
    check_labels(x, y)?;
    (0..x.n_cols())
        .into_par_iter()
        .map(|j| roc_auc(&x.column(j), y).map(|auc| (auc - 0.5).abs()))
        .collect()
}

pub fn feature_auc_scores(x: &FeatureMatrix, y: &[u8]) -> Result<Vec<FeatureScore>> {
    Ok(column_sigmas(x, y)?
        .into_iter()
        .zip(&x.columns)
        .map(|(sigma, index)| FeatureScore {
            index: index.clone(),
            sigma,
        })
        .collect())
}

/// Absolute Pearson correlation of each column with the labels. Constant
/// columns score 0.
pub fn feature_correlation_scores(x: &FeatureMatrix, y: &[u8]) -> Result<Vec<f64>> {
    check_labels(x, y)?;
    let n = y.len() as f64;
    let y_mean = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let yc: Vec<f64> = y.iter().map(|&v| v as f64 - y_mean).collect();
    let y_ss: f64 = yc.iter().map(|v| v * v).sum();
    Ok((0..x.n_cols())
        .into_par_iter()
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let (mut cov, mut ss) = (0.0, 0.0);
            for (v, yv) in col.iter().zip(&yc) {
                let c = v - mean;
                cov += c * yv;
                ss += c * c;
            }
            if ss == 0.0 {
                0.0
            } else {
                (cov / (ss * y_ss).sqrt()).abs().min(1.0)
            }
        })
        .collect())
}

/// Positions of the `k` largest scores, descending; ties keep input order.
pub fn top_k_positions(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx.truncate(k);
    idx
}

/// Top-`k` features by descending sigma. `scores` must be in provenance
/// order (signature tensor order, then ascending position), which makes the
/// tie-break deterministic.
pub fn select_top_weights(scores: &[FeatureScore], k: usize) -> Vec<FeatureIndex> {
    let sigmas: Vec<f64> = scores.iter().map(|s| s.sigma).collect();
    top_k_positions(&sigmas, k)
        .into_iter()
        .map(|i| scores[i].index.clone())
        .collect()
}

/// Top-`k` tensors by mean validation AUC. `scores` must be in signature order.
pub fn select_top_tensors(scores: &[TensorScore], k: usize) -> Vec<String> {
    let aucs: Vec<f64> = scores.iter().map(|s| s.mean_validation_auc).collect();
    top_k_positions(&aucs, k)
        .into_iter()
        .map(|i| scores[i].tensor_name.clone())
        .collect()
}

/// Sub-split protocol for ranking tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorSplitSpec {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub weight_k: usize,
    pub seed: u64,
}

impl Default for TensorSplitSpec {
    fn default() -> Self {
        Self {
            n_splits: 5,
            train_fraction: 0.8,
            weight_k: DEFAULT_WEIGHT_K,
            seed: 0,
        }
    }
}

fn validation_auc(x: &FeatureMatrix, y: &[u8], train: &[usize], val: &[usize], weight_k: usize) -> Result<f64> {
    let x_train = x.select_rows(train);
    let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let sigmas = column_sigmas(&x_train, &y_train)?;
    let cols = top_k_positions(&sigmas, weight_k);
    let fit = train_logreg(
        &x_train.select_columns(&cols),
        &y_train,
        TENSOR_PROBE_P,
        &LogRegOptions::default(),
    )?;
    let x_val = x.select_rows(val).select_columns(&cols);
    let scores: Vec<f64> = (0..x_val.n_rows()).map(|i| fit.logit(x_val.row(i))).collect();
    let y_val: Vec<u8> = val.iter().map(|&i| y[i]).collect();
    roc_auc(&scores, &y_val)
}

/// Mean held-out AUC of a probe classifier trained on each tensor alone.
/// Every tensor sees the same sub-splits.
pub fn tensor_generalization_scores(
    models: &[ModelWeights],
    y: &[u8],
    base_config: &PreprocessConfig,
    signature: &ArchitectureSignature,
    spec: &TensorSplitSpec,
) -> Result<Vec<TensorScore>> {
    if models.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models for {} labels",
            models.len(),
            y.len()
        )));
    }
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    if n_pos < 2 || y.len() - n_pos < 2 {
        return Err(Error::InvalidArgument(
            "tensor selection needs at least two models per class".into(),
        ));
    }
    let n_val = ((1.0 - spec.train_fraction) * y.len() as f64).round() as usize;
    let n_val = n_val.clamp(2, y.len() - 2);
    let splits = (0..spec.n_splits)
        .map(|s| random_split(y, n_val, spec.seed.wrapping_add(s as u64)))
        .collect::<Result<Vec<_>>>()?;

    let ids: Vec<String> = (0..models.len()).map(|i| i.to_string()).collect();
    let base = PreprocessConfig {
        tensor_whitelist: None,
        ..base_config.clone()
    };
    signature
        .tensors
        .par_iter()
        .map(|spec_t| {
            let cfg = base.with_whitelist(vec![spec_t.name.clone()]);
            let x = build_feature_matrix(&ids, models, &cfg, signature)?;
            let aucs = splits
                .iter()
                .map(|(train, val)| validation_auc(&x, y, train, val, spec.weight_k))
                .collect::<Result<Vec<_>>>()?;
            Ok(TensorScore {
                tensor_name: spec_t.name.clone(),
                mean_validation_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
                n_splits: aucs.len(),
            })
        })
        .collect()
}
