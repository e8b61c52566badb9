//! Evaluation protocols: repeated random holdout, learning curves and
//! train/test distribution shift.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{fit_detector, DetectorOptions};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, DEFAULT_CLAMP};
use crate::split::{holdout_count, random_split, stratified_sample};
use crate::weight_store::ModelWeights;

/// One CSV row: `config,trial,seed,n_train,auc,ce`. Mean rows carry
/// `trial = "mean"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub config: String,
    pub trial: String,
    pub seed: u64,
    pub n_train: usize,
    pub auc: f64,
    pub ce: f64,
}

/// A labeled model population held in memory.
#[derive(Debug, Clone, Copy)]
pub struct Population<'a> {
    pub models: &'a [ModelWeights],
    pub labels: &'a [u8],
    pub reference: Option<&'a ModelWeights>,
}

impl<'a> Population<'a> {
    pub fn new(models: &'a [ModelWeights], labels: &'a [u8]) -> Self {
        Self {
            models,
            labels,
            reference: None,
        }
    }

    fn subset(&self, idx: &[usize]) -> (Vec<ModelWeights>, Vec<u8>) {
        (
            idx.iter().map(|&i| self.models[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Fits on `train` and scores `test`.
pub fn train_and_evaluate(
    train: (&[ModelWeights], &[u8]),
    test: (&[ModelWeights], &[u8]),
    reference: Option<&ModelWeights>,
    options: &DetectorOptions,
) -> Result<EvalReport> {
    let detector = fit_detector(train.0, train.1, reference, options)?;
    let probs = detector.predict_batch(test.0)?;
    evaluate(&probs, test.1, DEFAULT_CLAMP)
}

/// Repeated random holdout. Trial `t` holds out `holdout_fraction` of the
/// models with seed `seed + t`; every config sees the same splits. Rows are
/// ordered by (config, trial).
pub fn holdout_trials(
    pop: Population<'_>,
    configs: &[(String, DetectorOptions)],
    holdout_fraction: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ExperimentRow>> {
    let n_hold = holdout_count(pop.labels.len(), holdout_fraction);
    let mut rows = Vec::with_capacity(configs.len() * repeats);
    for (name, options) in configs {
        for t in 0..repeats {
            let trial_seed = seed.wrapping_add(t as u64);
            let (train, test) = random_split(pop.labels, n_hold, trial_seed)?;
            let (train_m, train_y) = pop.subset(&train);
            let (test_m, test_y) = pop.subset(&test);
            let opts = options.clone().with_seed(trial_seed);
            let r = train_and_evaluate((&train_m, &train_y), (&test_m, &test_y), pop.reference, &opts)?;
            rows.push(ExperimentRow {
                config: name.clone(),
                trial: t.to_string(),
                seed: trial_seed,
                n_train: train.len(),
                auc: r.auc,
                ce: r.ce,
            });
        }
    }
    Ok(rows)
}

/// Learning curve. Each trial fixes a held-out test set, then for every
/// size draws a class-balanced training subset from the remaining models.
pub fn learning_curve(
    pop: Population<'_>,
    config_name: &str,
    options: &DetectorOptions,
    train_sizes: &[usize],
    test_fraction: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ExperimentRow>> {
    let n_hold = holdout_count(pop.labels.len(), test_fraction);
    let mut rows = Vec::new();
    for &size in train_sizes {
        if size < 4 {
            return Err(Error::InvalidArgument(format!("train size {size} is below 4")));
        }
        for t in 0..repeats {
            let trial_seed = seed.wrapping_add(t as u64);
            let (pool, test) = random_split(pop.labels, n_hold, trial_seed)?;
            let n_pos = size / 2;
            let train = stratified_sample(pop.labels, &pool, n_pos, size - n_pos, trial_seed ^ size as u64)?;
            let (train_m, train_y) = pop.subset(&train);
            let (test_m, test_y) = pop.subset(&test);
            let opts = options.clone().with_seed(trial_seed);
            let r = train_and_evaluate((&train_m, &train_y), (&test_m, &test_y), pop.reference, &opts)?;
            rows.push(ExperimentRow {
                config: config_name.to_string(),
                trial: t.to_string(),
                seed: trial_seed,
                n_train: size,
                auc: r.auc,
                ce: r.ce,
            });
        }
    }
    Ok(rows)
}

/// Train/test distribution shift between two populations: fits on `a` and
/// scores `b` (trial `a_to_b`), then the reverse (trial `b_to_a`). The
/// reference of `a` is used in both directions.
pub fn distribution_shift(
    a: Population<'_>,
    b: Population<'_>,
    configs: &[(String, DetectorOptions)],
    seed: u64,
) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::with_capacity(2 * configs.len());
    for (name, options) in configs {
        let opts = options.clone().with_seed(seed);
        for (trial, train, test) in [("a_to_b", a, b), ("b_to_a", b, a)] {
            let r = train_and_evaluate((train.models, train.labels), (test.models, test.labels), a.reference, &opts)?;
            rows.push(ExperimentRow {
                config: name.clone(),
                trial: trial.into(),
                seed,
                n_train: train.labels.len(),
                auc: r.auc,
                ce: r.ce,
            });
        }
    }
    Ok(rows)
}

/// Appends one `trial = "mean"` row per (config, n_train) group, in first
/// appearance order.
pub fn with_means(rows: Vec<ExperimentRow>, seed: u64) -> Vec<ExperimentRow> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for r in &rows {
        let key = (r.config.clone(), r.n_train);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut out = rows.clone();
    for (config, n_train) in groups {
        let g: Vec<&ExperimentRow> = rows
            .iter()
            .filter(|r| r.config == config && r.n_train == n_train)
            .collect();
        let n = g.len() as f64;
        out.push(ExperimentRow {
            auc: g.iter().map(|r| r.auc).sum::<f64>() / n,
            ce: g.iter().map(|r| r.ce).sum::<f64>() / n,
            config,
            trial: "mean".into(),
            seed,
            n_train,
        });
    }
    out
}

/// Mean AUC of the rows matching `config` (and `n_train` if given),
/// ignoring mean rows.
pub fn mean_auc(rows: &[ExperimentRow], config: &str, n_train: Option<usize>) -> f64 {
    let sel: Vec<f64> = rows
        .iter()
        .filter(|r| r.trial != "mean" && r.config == config && n_train.is_none_or(|n| r.n_train == n))
        .map(|r| r.auc)
        .collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

pub fn write_rows_csv(path: impl AsRef<Path>, rows: &[ExperimentRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
