//! Turning raw weights into aligned feature rows.
//!
//! Every model goes through the same fixed sequence:
//!
//! 1. restrict to the signature tensors (and the whitelist, if any),
//! 2. subtract the reference model,
//! 3. divide each tensor by its standard deviation (`NormMethod::Tensor`),
//! 4. sort each tensor's flattened values ascending,
//! 5. concatenate in signature order,
//! 6. divide the whole row by its standard deviation (`NormMethod::Model`).
//!
//! Steps 3 and 4 commute since the standard deviation ignores element
//! order. All arithmetic is done in `f64`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weight_store::{ArchitectureSignature, ModelWeights, WeightTensor};

/// Standard deviations at or below this are treated as constant input.
pub const STD_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Tensor,
    Model,
    None,
}

impl fmt::Display for NormMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMethod::Tensor => "tensor",
            NormMethod::Model => "model",
            NormMethod::None => "none",
        })
    }
}

impl FromStr for NormMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tensor" => Ok(NormMethod::Tensor),
            "model" => Ok(NormMethod::Model),
            "none" => Ok(NormMethod::None),
            _ => Err(Error::InvalidArgument(format!("unknown norm method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub reference: Option<ModelWeights>,
    pub norm: NormMethod,
    pub sorted: bool,
    pub tensor_whitelist: Option<Vec<String>>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            reference: None,
            norm: NormMethod::None,
            sorted: false,
            tensor_whitelist: None,
        }
    }
}

impl PreprocessConfig {
    /// The signature tensors that survive the whitelist, in signature order.
    pub fn effective_signature(&self, signature: &ArchitectureSignature) -> Result<ArchitectureSignature> {
        let sig = match &self.tensor_whitelist {
            Some(names) => signature.restrict(names)?,
            None => signature.clone(),
        };
        if let Some(reference) = &self.reference {
            sig.check(reference)?;
        }
        Ok(sig)
    }

    pub fn with_whitelist(&self, names: Vec<String>) -> Self {
        Self {
            tensor_whitelist: Some(names),
            ..self.clone()
        }
    }
}

/// Identifies one feature column: an element of a processed tensor.
///
/// When sorting is enabled `position` indexes the sorted tensor, i.e. it
/// names a quantile rather than a specific weight.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub tensor: String,
    pub position: usize,
}

/// Dense row-major `N x D` matrix with per-column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub row_ids: Vec<String>,
    pub columns: Vec<FeatureIndex>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(row_ids: Vec<String>, columns: Vec<FeatureIndex>, values: Vec<f64>) -> Result<Self> {
        if values.len() != row_ids.len() * columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {}x{} matrix",
                values.len(),
                row_ids.len(),
                columns.len()
            )));
        }
        Ok(Self {
            row_ids,
            columns,
            values,
        })
    }

    /// Matrix with anonymous row ids and columns `("x", j)`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let row_ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        let columns = (0..d)
            .map(|position| FeatureIndex {
                tensor: "x".into(),
                position,
            })
            .collect();
        Self::new(row_ids, columns, rows.into_iter().flatten().collect())
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(self.n_rows() * cols.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            values.extend(cols.iter().map(|&j| row[j]));
        }
        FeatureMatrix {
            row_ids: self.row_ids.clone(),
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            values,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            columns: self.columns.clone(),
            values,
        }
    }

    /// Column indices for the given provenance entries.
    pub fn locate(&self, features: &[FeatureIndex]) -> Result<Vec<usize>> {
        let lookup: HashMap<&FeatureIndex, usize> =
            self.columns.iter().enumerate().map(|(j, c)| (c, j)).collect();
        features
            .iter()
            .map(|f| {
                lookup.get(f).copied().ok_or_else(|| {
                    Error::InvalidArgument(format!("feature {}[{}] not in matrix", f.tensor, f.position))
                })
            })
            .collect()
    }
}

/// Population standard deviation (divides by the element count).
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn scale_by_std(values: &[f64]) -> Result<Vec<f64>> {
    let std = population_std(values);
    if std <= STD_EPSILON {
        return Err(Error::Degenerate(std));
    }
    Ok(values.iter().map(|v| v / std).collect())
}

/// Divides a tensor's values by their population standard deviation.
pub fn tensor_norm(values: &[f64]) -> Result<Vec<f64>> {
    scale_by_std(values)
}

/// Divides a whole flattened model vector by its population standard deviation.
pub fn model_norm(flat: &[f64]) -> Result<Vec<f64>> {
    scale_by_std(flat)
}

/// Flattened tensor values in ascending order.
pub fn sort_tensor(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

/// Elementwise `model - reference` on the signature tensors; everything
/// else is dropped. The difference is stored back as `f32`.
pub fn subtract_reference(
    model: &ModelWeights,
    reference: &ModelWeights,
    signature: &ArchitectureSignature,
) -> Result<ModelWeights> {
    let tensors = signature
        .tensors
        .iter()
        .map(|spec| {
            let a = model.expect_tensor(spec)?;
            let b = reference.expect_tensor(spec)?;
            let diff = a.data().iter().zip(b.data()).map(|(x, r)| x - r).collect();
            WeightTensor::new(spec.name.clone(), spec.shape.clone(), diff)
        })
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::new(tensors, model.metadata().clone())
}

/// Runs the full pipeline on one model and returns its feature row.
pub fn process_model(
    model: &ModelWeights,
    config: &PreprocessConfig,
    signature: &ArchitectureSignature,
) -> Result<Vec<f64>> {
    let sig = config.effective_signature(signature)?;
    process_with_signature(model, config, &sig)
}

fn process_with_signature(
    model: &ModelWeights,
    config: &PreprocessConfig,
    sig: &ArchitectureSignature,
) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(sig.num_features());
    for spec in &sig.tensors {
        let t = model.expect_tensor(spec)?;
        let mut block: Vec<f64> = match &config.reference {
            Some(reference) => {
                let r = reference.expect_tensor(spec)?;
                t.data()
                    .iter()
                    .zip(r.data())
                    .map(|(&x, &y)| x as f64 - y as f64)
                    .collect()
            }
            None => t.to_f64(),
        };
        // Sorting first gives the same values as normalizing first (the
        // scale is positive) and makes the std sum order-independent, so
        // permuted models produce bit-identical rows.
        if config.sorted {
            block.sort_by(f64::total_cmp);
        }
        if config.norm == NormMethod::Tensor {
            // constant tensors carry no information; zero them out
            block = tensor_norm(&block).unwrap_or_else(|_| vec![0.0; block.len()]);
        }
        row.extend(block);
    }
    if config.norm == NormMethod::Model {
        row = model_norm(&row)?;
    }
    Ok(row)
}

/// Column provenance for a signature, in flatten order.
pub fn feature_columns(sig: &ArchitectureSignature) -> Vec<FeatureIndex> {
    sig.tensors
        .iter()
        .flat_map(|s| {
            (0..s.numel()).map(move |position| FeatureIndex {
                tensor: s.name.clone(),
                position,
            })
        })
        .collect()
}

/// Builds the `N x D` feature matrix. Rows are computed in parallel and
/// assembled in input order.
pub fn build_feature_matrix(
    row_ids: &[String],
    models: &[ModelWeights],
    config: &PreprocessConfig,
    signature: &ArchitectureSignature,
) -> Result<FeatureMatrix> {
    if row_ids.len() != models.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {} models",
            row_ids.len(),
            models.len()
        )));
    }
    let sig = config.effective_signature(signature)?;
    let rows = models
        .par_iter()
        .map(|m| process_with_signature(m, config, &sig))
        .collect::<Result<Vec<_>>>()?;
    let values = rows.into_iter().flatten().collect();
    FeatureMatrix::new(row_ids.to_vec(), feature_columns(&sig), values)
}
