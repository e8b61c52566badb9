//! Regularization search by repeated random holdout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logreg::{train_logreg, LogRegOptions};
use crate::error::{Error, Result};
use crate::metrics::{cross_entropy, DEFAULT_CLAMP};
use crate::preprocess::FeatureMatrix;
use crate::split::{holdout_count, random_split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    /// Candidate `P` values, ascending.
    pub grid: Vec<f64>,
    pub iterations: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self {
            grid: log_grid(1e-4, 1e4, 17),
            iterations: 30,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// `points` values spaced evenly in log10 between `min` and `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![min];
    }
    let (lo, hi) = (min.log10(), max.log10());
    (0..points)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .collect()
}

impl CvSpec {
    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("P grid must be non-empty and positive".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("P grid must be strictly ascending".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("need at least one CV iteration".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidArgument("holdout fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_p: f64,
    pub best_cross_entropy: f64,
    /// `(P, mean holdout CE)` for every grid point.
    pub per_p: Vec<(f64, f64)>,
}

/// For each grid value, averages holdout cross-entropy over seeded random
/// holdouts (iteration `t` uses seed `spec.seed + t`; all grid points share
/// the same holdouts). Picks the minimizer, ties going to the smaller `P`.
pub fn cross_validate_p(x: &FeatureMatrix, y: &[u8], spec: &CvSpec) -> Result<CvResult> {
    spec.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows for {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    let n_hold = holdout_count(y.len(), spec.holdout_fraction);
    let options = LogRegOptions::default();

    let per_iteration = (0..spec.iterations)
        .into_par_iter()
        .map(|t| {
            let (train, hold) = random_split(y, n_hold, spec.seed.wrapping_add(t as u64))?;
            let x_train = x.select_rows(&train);
            let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let x_hold = x.select_rows(&hold);
            let y_hold: Vec<u8> = hold.iter().map(|&i| y[i]).collect();
            spec.grid
                .iter()
                .map(|&p| {
                    let fit = train_logreg(&x_train, &y_train, p, &options)?;
                    let probs: Vec<f64> = (0..x_hold.n_rows()).map(|i| fit.predict_proba(x_hold.row(i))).collect();
                    cross_entropy(&probs, &y_hold, DEFAULT_CLAMP)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let per_p: Vec<(f64, f64)> = spec
        .grid
        .iter()
        .enumerate()
        .map(|(g, &p)| {
            let total: f64 = per_iteration.iter().map(|ces| ces[g]).sum();
            (p, total / spec.iterations as f64)
        })
        .collect();
    let (best_p, best_cross_entropy) = per_p
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    if best_p.is_nan() {
        return Err(Error::Diverged("cross-validation produced no finite cross-entropy".into()));
    }
    Ok(CvResult {
        best_p,
        best_cross_entropy,
        per_p,
    })
}
