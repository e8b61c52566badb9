//! Trojan detection from model weights alone.
//!
//! A population of clean and poisoned models sharing an architecture is
//! turned into a feature matrix (optionally reference-subtracted, normalized
//! and sorted per tensor), the most discriminative weights are kept, and a
//! regularized logistic regression separates the two classes.
//!
//! Modules:
//!
//! - [`weight_store`]: the MWS weight file format, manifests, architecture matching
//! - [`preprocess`]: reference subtraction, normalization, sorting, feature matrices
//! - [`feature_select`]: AUC-based weight ranking and tensor ranking
//! - [`detector`]: logistic regression, regularization search, the detector artifact
//! - [`metrics`]: ROC-AUC, cross-entropy, ROC curves
//! - [`zoo`]: scratch-trained clean/poisoned model populations
//! - [`experiment`]: repeated-holdout, learning-curve and distribution-shift runs

pub mod detector;
pub mod error;
pub mod experiment;
pub mod feature_select;
pub mod metrics;
pub mod preprocess;
pub mod split;
pub mod weight_store;
pub mod zoo;

pub use detector::{
    fit_detector, load_detector, save_detector, ConfigFlags, Detector, DetectorOptions, NamedConfig,
    Regularization,
};
pub use error::{Error, Result};
pub use preprocess::{FeatureIndex, FeatureMatrix, NormMethod, PreprocessConfig};
pub use weight_store::{
    read_manifest, read_model, write_manifest, write_model, ArchitectureSignature, Manifest, ManifestEntry,
    ModelWeights, WeightTensor,
};
