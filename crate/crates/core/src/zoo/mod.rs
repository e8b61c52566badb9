//! Populations of scratch-trained clean and poisoned classifiers.
//!
//! Every model in a zoo solves the same synthetic task. Poisoned models see
//! a fraction of their training images stamped with a trigger and relabeled
//! to a target class; trigger placement, pattern and target class are drawn
//! per model.

pub mod mlp;
pub mod task;
pub mod trigger;

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mlp::{Mlp, TrainConfig, FC3_ARCH};
pub use task::{make_task, ImageSet, SyntheticTask, TaskConfig};
pub use trigger::{apply_trigger, Corner, TriggerKind, TriggerPattern, TriggerSpec};

use crate::error::{Error, Result};
use crate::split::rng;
use crate::weight_store::{write_manifest, write_model, Manifest, ManifestEntry, ModelWeights};

const LR_RANGE: Option<[f32; 2]> = None;

/// Which trigger families poisoned models use. `Both` alternates by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMix {
    Checkerboard,
    Watermark,
    Both,
}

impl TriggerMix {
    fn kind_for(self, poisoned_index: usize) -> TriggerKind {
        match self {
            TriggerMix::Checkerboard => TriggerKind::Checkerboard,
            TriggerMix::Watermark => TriggerKind::Watermark,
            TriggerMix::Both if poisoned_index % 2 == 0 => TriggerKind::Checkerboard,
            TriggerMix::Both => TriggerKind::Watermark,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    pub n_clean: usize,
    pub n_poisoned: usize,
    pub trigger_mix: TriggerMix,
    pub seed: u64,
    pub task: TaskConfig,
    pub training: TrainConfig,
    pub patch_side: usize,
    pub watermark_alpha: f32,
    pub poison_fraction: f64,
    pub min_clean_accuracy: f64,
    pub min_asr: f64,
    /// Largest allowed drop of a poisoned model's clean accuracy below the
    /// mean clean-model accuracy.
    pub max_accuracy_gap: f64,
    pub max_attempts: usize,
    /// When set, each model draws its learning rate log-uniformly from this
    /// range instead of using `training.learning_rate`.
    pub learning_rate_range: Option<[f32; 2]>,
    /// When set, each poisoned model draws its poison fraction
    /// log-uniformly from this range instead of using `poison_fraction`.
    pub poison_fraction_range: Option<[f64; 2]>,
}

impl Default for ZooConfig {
    fn default() -> Self {
        Self {
            n_clean: 20,
            n_poisoned: 20,
            trigger_mix: TriggerMix::Both,
            seed: 0,
            task: TaskConfig::default(),
            training: TrainConfig::default(),
            patch_side: 3,
            watermark_alpha: 0.1,
            poison_fraction: 0.1,
            min_clean_accuracy: 0.85,
            min_asr: 0.95,
            max_accuracy_gap: 0.05,
            max_attempts: 5,
            learning_rate_range: LR_RANGE,
            poison_fraction_range: None,
        }
    }
}

impl ZooConfig {
    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.task.image_side * self.task.image_side];
        sizes.extend(&self.training.hidden);
        sizes.push(self.task.n_classes);
        sizes
    }

    /// The task shared by every model of the zoo.
    pub fn task(&self) -> SyntheticTask {
        make_task(&self.task, self.seed)
    }

    /// Training settings for the model trained from `seed`.
    pub fn training_for(&self, seed: u64) -> TrainConfig {
        let mut training = self.training.clone();
        if let Some([lo, hi]) = self.learning_rate_range {
            let mut r = rng(seed ^ 0x6c72);
            let u: f32 = r.random();
            training.learning_rate = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
        }
        training
    }

    /// Draws a trigger of the given kind from `seed`.
    pub fn random_trigger(&self, kind: TriggerKind, seed: u64) -> TriggerSpec {
        let mut r = rng(seed ^ 0x7472_6967_6765_72);
        let target_class = r.random_range(0..self.task.n_classes) as u8;
        let pattern = match kind {
            TriggerKind::Checkerboard => TriggerPattern::Checkerboard {
                patch_side: self.patch_side,
                corner: *Corner::ALL.choose(&mut r).unwrap(),
            },
            TriggerKind::Watermark => {
                let pixels = self.task.image_side * self.task.image_side;
                TriggerPattern::Watermark {
                    pattern: (0..pixels).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect(),
                    alpha: self.watermark_alpha,
                }
            }
        };
        let poison_fraction = match self.poison_fraction_range {
            Some([lo, hi]) => (lo.ln() + r.random::<f64>() * (hi.ln() - lo.ln())).exp(),
            None => self.poison_fraction,
        };
        TriggerSpec {
            pattern,
            target_class,
            poison_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooModelStats {
    pub id: String,
    pub arch: String,
    pub trigger: Option<TriggerKind>,
    pub clean_accuracy: f64,
    pub asr: Option<f64>,
    pub seed: u64,
}

/// Fraction of triggered test images from non-target classes that the
/// model assigns to the target class.
pub fn attack_success_rate(model: &Mlp, test: &ImageSet, side: usize, trigger: &TriggerSpec) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for i in 0..test.len() {
        if test.labels[i] == trigger.target_class {
            continue;
        }
        let x = apply_trigger(test.image(i), side, &trigger.pattern)?;
        total += 1;
        if model.predict(&x) == trigger.target_class as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Poisons `poison_fraction` of the non-target training images.
fn poison_training_set(data: &ImageSet, side: usize, trigger: &TriggerSpec, seed: u64) -> Result<ImageSet> {
    let mut r = rng(seed);
    let mut candidates: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] != trigger.target_class)
        .collect();
    candidates.shuffle(&mut r);
    let n_poison = (trigger.poison_fraction * data.len() as f64).round() as usize;
    let mut out = data.clone();
    for &i in candidates.iter().take(n_poison) {
        let x = apply_trigger(data.image(i), side, &trigger.pattern)?;
        out.images[i * data.pixels..(i + 1) * data.pixels].copy_from_slice(&x);
        out.labels[i] = trigger.target_class;
    }
    Ok(out)
}

/// Trains one model on `task`, poisoned with `trigger` if given.
pub fn train_mlp(
    task: &SyntheticTask,
    layer_sizes: &[usize],
    training: &TrainConfig,
    trigger: Option<&TriggerSpec>,
    seed: u64,
) -> Result<(ModelWeights, ZooModelStats)> {
    let mut r = rng(seed);
    let init_seed: u64 = r.random();
    let shuffle_seed: u64 = r.random();
    let poison_seed: u64 = r.random();

    let side = task.config.image_side;
    let train = match trigger {
        Some(t) => poison_training_set(&task.train, side, t, poison_seed)?,
        None => task.train.clone(),
    };
    let mut model = Mlp::new(layer_sizes, init_seed);
    model.train(&train, training, shuffle_seed)?;

    let clean_accuracy = model.accuracy(&task.test);
    let asr = trigger
        .map(|t| attack_success_rate(&model, &task.test, side, t))
        .transpose()?;
    let stats = ZooModelStats {
        id: String::new(),
        arch: FC3_ARCH.to_string(),
        trigger: trigger.map(TriggerSpec::kind),
        clean_accuracy,
        asr,
        seed,
    };
    Ok((model.to_weights(FC3_ARCH), stats))
}

/// Seed for `attempt` of model `index`.
fn model_seed(base: u64, index: usize, attempt: usize) -> u64 {
    base.wrapping_add(index as u64)
        .wrapping_add((attempt as u64).wrapping_mul(1_000_003))
}

pub fn model_id(index: usize) -> String {
    format!("model_{index:04}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooModel {
    pub weights: ModelWeights,
    pub stats: ZooModelStats,
    pub label: u8,
}

fn train_with_retries(
    config: &ZooConfig,
    task: &SyntheticTask,
    index: usize,
    kind: Option<TriggerKind>,
    accuracy_floor: f64,
) -> Result<ZooModel> {
    let sizes = config.layer_sizes();
    for attempt in 0..config.max_attempts {
        let seed = model_seed(config.seed, index, attempt);
        let trigger = kind.map(|k| config.random_trigger(k, seed));
        let (weights, mut stats) = match train_mlp(task, &sizes, &config.training_for(seed), trigger.as_ref(), seed) {
            Ok(v) => v,
            Err(Error::Diverged(_)) => continue,
            Err(e) => return Err(e),
        };
        let ok = stats.clean_accuracy >= accuracy_floor && stats.asr.is_none_or(|a| a >= config.min_asr);
        if ok {
            stats.id = model_id(index);
            return Ok(ZooModel {
                weights,
                stats,
                label: kind.is_some() as u8,
            });
        }
    }
    Err(Error::ZooRetries(config.max_attempts))
}

/// Trains the whole zoo in memory: clean models first (labels 0), then
/// poisoned ones (labels 1). Model `i` starts from seed `config.seed + i`.
/// Output does not depend on thread scheduling.
pub fn train_zoo(config: &ZooConfig) -> Result<Vec<ZooModel>> {
    let task = config.task();
    let clean = (0..config.n_clean)
        .into_par_iter()
        .map(|i| train_with_retries(config, &task, i, None, config.min_clean_accuracy))
        .collect::<Result<Vec<_>>>()?;
    let mean_clean = if clean.is_empty() {
        config.min_clean_accuracy
    } else {
        clean.iter().map(|m| m.stats.clean_accuracy).sum::<f64>() / clean.len() as f64
    };
    let floor = config.min_clean_accuracy.max(mean_clean - config.max_accuracy_gap);
    let poisoned = (0..config.n_poisoned)
        .into_par_iter()
        .map(|j| {
            let kind = config.trigger_mix.kind_for(j);
            train_with_retries(config, &task, config.n_clean + j, Some(kind), floor)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(clean.into_iter().chain(poisoned).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooStats {
    pub models: Vec<ZooModelStats>,
    pub config: ZooConfig,
}

impl ZooStats {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATS_FILE: &str = "zoo_stats.json";

/// Trains the zoo and writes `models/<id>.mws`, `manifest.json` and
/// `zoo_stats.json` under `out_dir`.
pub fn generate_zoo(config: &ZooConfig, out_dir: impl AsRef<Path>) -> Result<(Manifest, ZooStats)> {
    let out_dir = out_dir.as_ref();
    let models_dir = out_dir.join("models");
    fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    let zoo = train_zoo(config)?;
    let mut entries = Vec::with_capacity(zoo.len());
    for m in &zoo {
        let rel = format!("models/{}.mws", m.stats.id);
        write_model(out_dir.join(&rel), &m.weights)?;
        entries.push(ManifestEntry {
            id: m.stats.id.clone(),
            path: rel,
            architecture: FC3_ARCH.to_string(),
            label: Some(m.label),
        });
    }
    let manifest = Manifest::new(entries)?;
    write_manifest(out_dir.join(MANIFEST_FILE), &manifest)?;
    let stats = ZooStats {
        models: zoo.into_iter().map(|m| m.stats).collect(),
        config: config.clone(),
    };
    stats.write(out_dir.join(STATS_FILE))?;
    Ok((manifest, stats))
}

/// Partitions for the trigger distribution-shift protocol: the first holds
/// the even-numbered clean models plus every checkerboard model, the second
/// the odd-numbered clean models plus every watermark model.
pub fn split_by_trigger(manifest: &Manifest, stats: &[ZooModelStats]) -> Result<(Manifest, Manifest)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut clean_seen = 0usize;
    for entry in &manifest.models {
        let s = stats
            .iter()
            .find(|s| s.id == entry.id)
            .ok_or_else(|| Error::Manifest(format!("no zoo stats for model `{}`", entry.id)))?;
        match (entry.label, s.trigger) {
            (Some(0), _) => {
                if clean_seen % 2 == 0 {
                    a.push(entry.clone());
                } else {
                    b.push(entry.clone());
                }
                clean_seen += 1;
            }
            (Some(1), Some(TriggerKind::Checkerboard)) => a.push(entry.clone()),
            (Some(1), Some(TriggerKind::Watermark)) => b.push(entry.clone()),
            _ => {
                return Err(Error::Manifest(format!(
                    "model `{}` lacks a label or trigger annotation",
                    entry.id
                )))
            }
        }
    }
    Ok((Manifest::new(a)?, Manifest::new(b)?))
}
