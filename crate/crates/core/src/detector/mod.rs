//! The linear weight-space detector: configuration, fitting, prediction and
//! the on-disk artifact.

pub mod cv;
pub mod logreg;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate_p, log_grid, CvResult, CvSpec};
pub use logreg::{sigmoid, train_logreg, LogRegFit, LogRegOptions};

use crate::error::{Error, Result};
use crate::feature_select::{
    column_sigmas, select_top_tensors, tensor_generalization_scores, top_k_positions, FeatureScore,
    TensorScore, TensorSplitSpec, DEFAULT_TENSOR_K, DEFAULT_WEIGHT_K,
};
use crate::preprocess::{
    build_feature_matrix, process_model, FeatureIndex, FeatureMatrix, NormMethod, PreprocessConfig,
};
use crate::weight_store::{
    common_architecture, manifest_dir, ArchitectureSignature, Manifest, ModelWeights, WeightTensor,
};

pub const DETECTOR_VERSION: u32 = 1;

/// The four switches that distinguish detector configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigFlags {
    pub reference: bool,
    pub norm: NormMethod,
    pub tensor_selection: bool,
    pub sorted: bool,
}

impl ConfigFlags {
    /// The same configuration with reference subtraction switched off, for
    /// scratch-trained model populations that have no common ancestor.
    pub fn without_reference(self) -> Self {
        Self {
            reference: false,
            ..self
        }
    }
}

/// Named rows of the detector configuration table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NamedConfig {
    Base,
    A,
    B,
    C,
    D,
    E,
    F,
}

impl NamedConfig {
    pub const ALL: [NamedConfig; 7] = [
        NamedConfig::Base,
        NamedConfig::A,
        NamedConfig::B,
        NamedConfig::C,
        NamedConfig::D,
        NamedConfig::E,
        NamedConfig::F,
    ];

    pub fn flags(self) -> ConfigFlags {
        use NormMethod::*;
        let (reference, norm, tensor_selection, sorted) = match self {
            NamedConfig::Base => (true, Tensor, true, false),
            NamedConfig::A => (false, Tensor, true, false),
            NamedConfig::B => (true, Model, true, true),
            NamedConfig::C => (true, Tensor, false, false),
            NamedConfig::D => (true, Tensor, true, true),
            NamedConfig::E => (false, Tensor, true, true),
            NamedConfig::F => (false, None, true, true),
        };
        ConfigFlags {
            reference,
            norm,
            tensor_selection,
            sorted,
        }
    }
}

impl fmt::Display for NamedConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NamedConfig::Base => "Base",
            NamedConfig::A => "A",
            NamedConfig::B => "B",
            NamedConfig::C => "C",
            NamedConfig::D => "D",
            NamedConfig::E => "E",
            NamedConfig::F => "F",
        };
        f.write_str(s)
    }
}

impl FromStr for NamedConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NamedConfig::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown config `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Regularization {
    Search(CvSpec),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOptions {
    pub flags: ConfigFlags,
    pub weight_k: usize,
    pub tensor_k: usize,
    pub tensor_splits: TensorSplitSpec,
    pub regularization: Regularization,
}

impl DetectorOptions {
    pub fn new(flags: ConfigFlags) -> Self {
        Self {
            flags,
            weight_k: DEFAULT_WEIGHT_K,
            tensor_k: DEFAULT_TENSOR_K,
            tensor_splits: TensorSplitSpec::default(),
            regularization: Regularization::Search(CvSpec::default()),
        }
    }

    /// Re-seeds every random stage from one seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.tensor_splits.seed = seed;
        if let Regularization::Search(cv) = &mut self.regularization {
            cv.seed = seed;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_models: usize,
    pub n_poisoned: usize,
    /// Mean holdout CE at the chosen `P`; absent when `P` was fixed.
    pub cv_cross_entropy: Option<f64>,
    pub cv_per_p: Vec<(f64, f64)>,
    pub tensor_scores: Vec<TensorScore>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub preprocess: PreprocessConfig,
    pub signature: ArchitectureSignature,
    pub features: Vec<FeatureIndex>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub p: f64,
    pub training_summary: TrainingSummary,
}

/// Output of the preprocessing and selection stages.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFeatures {
    /// Preprocessing restricted to the kept tensors, reference included.
    pub preprocess: PreprocessConfig,
    pub signature: ArchitectureSignature,
    pub tensor_scores: Vec<TensorScore>,
    /// Kept weights in selection order, with their scores.
    pub scores: Vec<FeatureScore>,
    /// Training rows restricted to the kept weights.
    pub matrix: FeatureMatrix,
}

fn check_training_labels(models: &[ModelWeights], labels: &[u8]) -> Result<usize> {
    if models.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models for {} labels",
            models.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidLabel(l as i64));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos < 2 || labels.len() - n_pos < 2 {
        return Err(Error::InvalidArgument("need at least two models per class".into()));
    }
    Ok(n_pos)
}

/// Architecture matching, optional tensor selection, preprocessing and
/// top-k weight selection.
pub fn select_features(
    models: &[ModelWeights],
    labels: &[u8],
    reference: Option<&ModelWeights>,
    options: &DetectorOptions,
) -> Result<SelectedFeatures> {
    check_training_labels(models, labels)?;
    let flags = options.flags;
    let reference = match (flags.reference, reference) {
        (true, Some(r)) => Some(r.clone()),
        (true, None) => return Err(Error::MissingReference),
        (false, _) => None,
    };

    let signature = match &reference {
        Some(r) => {
            let mut all = models.to_vec();
            all.push(r.clone());
            common_architecture(&all)?
        }
        None => common_architecture(models)?,
    };
    let base = PreprocessConfig {
        reference,
        norm: flags.norm,
        sorted: flags.sorted,
        tensor_whitelist: None,
    };

    let (whitelist, tensor_scores) = if flags.tensor_selection {
        let scores = tensor_generalization_scores(models, labels, &base, &signature, &options.tensor_splits)?;
        (select_top_tensors(&scores, options.tensor_k), scores)
    } else {
        (signature.names().map(String::from).collect(), Vec::new())
    };
    let mut preprocess = base.with_whitelist(whitelist);
    let signature = preprocess.effective_signature(&signature)?;
    preprocess.tensor_whitelist = Some(signature.names().map(String::from).collect());
    if let Some(r) = &preprocess.reference {
        preprocess.reference = Some(restrict_model(r, &signature)?);
    }

    let ids: Vec<String> = (0..models.len()).map(|i| i.to_string()).collect();
    let x = build_feature_matrix(&ids, models, &preprocess, &signature)?;
    let sigmas = column_sigmas(&x, labels)?;
    let cols = top_k_positions(&sigmas, options.weight_k);
    let scores = cols
        .iter()
        .map(|&j| FeatureScore {
            index: x.columns[j].clone(),
            sigma: sigmas[j],
        })
        .collect();
    Ok(SelectedFeatures {
        preprocess,
        signature,
        tensor_scores,
        scores,
        matrix: x.select_columns(&cols),
    })
}

/// Fits a detector on labeled models.
///
/// Stages: common architecture, optional tensor selection, feature matrix,
/// top-k weight selection, regularization search, final fit on all models.
pub fn fit_detector(
    models: &[ModelWeights],
    labels: &[u8],
    reference: Option<&ModelWeights>,
    options: &DetectorOptions,
) -> Result<Detector> {
    let n_pos = check_training_labels(models, labels)?;
    let SelectedFeatures {
        preprocess,
        signature,
        tensor_scores,
        matrix: x,
        ..
    } = select_features(models, labels, reference, options)?;

    let (p, cv_cross_entropy, cv_per_p) = match &options.regularization {
        Regularization::Fixed(p) => (*p, None, Vec::new()),
        Regularization::Search(spec) => {
            let r = cross_validate_p(&x, labels, spec)?;
            (r.best_p, Some(r.best_cross_entropy), r.per_p)
        }
    };
    let fit = train_logreg(&x, labels, p, &LogRegOptions::default())?;
    if fit.weights.iter().any(|w| !w.is_finite()) || !fit.bias.is_finite() {
        return Err(Error::Diverged("logistic regression produced non-finite weights".into()));
    }

    Ok(Detector {
        preprocess,
        signature,
        features: x.columns.clone(),
        weights: fit.weights,
        bias: fit.bias,
        p,
        training_summary: TrainingSummary {
            n_models: models.len(),
            n_poisoned: n_pos,
            cv_cross_entropy,
            cv_per_p,
            tensor_scores,
            converged: fit.converged,
            iterations: fit.iterations,
        },
    })
}

/// Loads the manifest's models (and labels) and calls [`fit_detector`].
pub fn fit_detector_from_manifest(
    manifest: &Manifest,
    manifest_path: &Path,
    reference: Option<&ModelWeights>,
    options: &DetectorOptions,
) -> Result<Detector> {
    let labels = manifest.labels()?;
    let models = manifest.load_models(&manifest_dir(manifest_path))?;
    fit_detector(&models, &labels, reference, options)
}

fn restrict_model(model: &ModelWeights, sig: &ArchitectureSignature) -> Result<ModelWeights> {
    let tensors = sig
        .tensors
        .iter()
        .map(|s| model.expect_tensor(s).cloned())
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::new(tensors, model.metadata().clone())
}

impl Detector {
    fn feature_offsets(&self) -> Result<Vec<usize>> {
        let mut start = HashMap::new();
        let mut offset = 0;
        for s in &self.signature.tensors {
            start.insert(s.name.as_str(), (offset, s.numel()));
            offset += s.numel();
        }
        self.features
            .iter()
            .map(|f| match start.get(f.tensor.as_str()) {
                Some(&(o, n)) if f.position < n => Ok(o + f.position),
                _ => Err(Error::MissingTensor(f.tensor.clone())),
            })
            .collect()
    }

    /// The selected feature vector of one model.
    pub fn features_of(&self, model: &ModelWeights) -> Result<Vec<f64>> {
        let row = process_model(model, &self.preprocess, &self.signature)?;
        Ok(self.feature_offsets()?.into_iter().map(|j| row[j]).collect())
    }

    pub fn logit(&self, model: &ModelWeights) -> Result<f64> {
        let x = self.features_of(model)?;
        Ok(self.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    /// Probability that `model` is poisoned.
    pub fn predict_proba(&self, model: &ModelWeights) -> Result<f64> {
        self.logit(model).map(sigmoid)
    }

    pub fn predict_batch(&self, models: &[ModelWeights]) -> Result<Vec<f64>> {
        models.par_iter().map(|m| self.predict_proba(m)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DetectorFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == DETECTOR_VERSION as u64 => {}
            Some(v) => return Err(Error::Version(v as u32)),
            None => return Err(Error::MalformedHeader("detector file has no version".into())),
        }
        let file: DetectorFile = serde_json::from_value(value)?;
        file.try_into()
    }
}

pub fn save_detector(path: impl AsRef<Path>, detector: &Detector) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, detector.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_detector(path: impl AsRef<Path>) -> Result<Detector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Detector::from_json(&text)
}

/// One scored model: `id,probability,label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub probability: f64,
    pub label: Option<u8>,
}

/// Scores every model of a manifest, carrying labels through when present.
pub fn predict_manifest(detector: &Detector, manifest: &Manifest, manifest_path: &Path) -> Result<Vec<Prediction>> {
    let models = manifest.load_models(&manifest_dir(manifest_path))?;
    let probs = detector.predict_batch(&models)?;
    Ok(manifest
        .models
        .iter()
        .zip(probs)
        .map(|(e, probability)| Prediction {
            id: e.id.clone(),
            probability,
            label: e.label,
        })
        .collect())
}

pub fn write_predictions_csv(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for p in predictions {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions_csv(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<Result<Vec<Prediction>, _>>()?)
}

/// Splits predictions into probabilities and labels; every row needs a label.
pub fn labeled_probabilities(predictions: &[Prediction]) -> Result<(Vec<f64>, Vec<u8>)> {
    predictions
        .iter()
        .map(|p| match p.label {
            Some(l) if l <= 1 => Ok((p.probability, l)),
            Some(l) => Err(Error::InvalidLabel(l as i64)),
            None => Err(Error::Manifest(format!("prediction for `{}` has no label", p.id))),
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    tensors: Vec<StoredTensor>,
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct StoredPreprocess {
    reference: Option<StoredModel>,
    norm: NormMethod,
    sorted: bool,
    tensor_whitelist: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct DetectorFile {
    version: u32,
    preprocess: StoredPreprocess,
    signature: ArchitectureSignature,
    features: Vec<FeatureIndex>,
    #[serde(rename = "W")]
    weights: Vec<f64>,
    b: f64,
    #[serde(rename = "P")]
    p: f64,
    training_summary: TrainingSummary,
}

impl From<&Detector> for DetectorFile {
    fn from(d: &Detector) -> Self {
        let reference = d.preprocess.reference.as_ref().map(|m| StoredModel {
            tensors: m
                .tensors()
                .iter()
                .map(|t| StoredTensor {
                    name: t.name().to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            metadata: m.metadata().clone(),
        });
        DetectorFile {
            version: DETECTOR_VERSION,
            preprocess: StoredPreprocess {
                reference,
                norm: d.preprocess.norm,
                sorted: d.preprocess.sorted,
                tensor_whitelist: d.preprocess.tensor_whitelist.clone(),
            },
            signature: d.signature.clone(),
            features: d.features.clone(),
            weights: d.weights.clone(),
            b: d.bias,
            p: d.p,
            training_summary: d.training_summary.clone(),
        }
    }
}

impl TryFrom<DetectorFile> for Detector {
    type Error = Error;

    fn try_from(f: DetectorFile) -> Result<Self> {
        if f.weights.len() != f.features.len() {
            return Err(Error::MalformedHeader(format!(
                "{} weights for {} features",
                f.weights.len(),
                f.features.len()
            )));
        }
        if !(f.p > 0.0) {
            return Err(Error::MalformedHeader(format!("non-positive P {}", f.p)));
        }
        let reference = f
            .preprocess
            .reference
            .map(|m| {
                let tensors = m
                    .tensors
                    .into_iter()
                    .map(|t| WeightTensor::new(t.name, t.shape, t.data))
                    .collect::<Result<Vec<_>>>()?;
                ModelWeights::new(tensors, m.metadata)
            })
            .transpose()?;
        let d = Detector {
            preprocess: PreprocessConfig {
                reference,
                norm: f.preprocess.norm,
                sorted: f.preprocess.sorted,
                tensor_whitelist: f.preprocess.tensor_whitelist,
            },
            signature: f.signature,
            features: f.features,
            weights: f.weights,
            bias: f.b,
            p: f.p,
            training_summary: f.training_summary,
        };
        d.feature_offsets()?;
        Ok(d)
    }
}
