//! Synthetic prototype image classification task.
//!
//! Each class has a fixed random prototype image; samples are the prototype
//! plus Gaussian pixel noise, clipped to `[0, 1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::split::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub image_side: usize,
    pub n_classes: usize,
    pub noise_std: f32,
    /// Prototype pixels are `0.5 + contrast * (u - 0.5)` with `u` uniform
    /// on `[0, 1]`; smaller values pull the classes together.
    pub contrast: f32,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            image_side: 10,
            n_classes: 4,
            noise_std: 0.1,
            contrast: 1.0,
            n_train: 2000,
            n_test: 1000,
        }
    }
}

/// Images stored row-major, one flattened `side * side` image per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub pixels: usize,
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.pixels..(i + 1) * self.pixels]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    pub seed: u64,
    pub prototypes: Vec<Vec<f32>>,
    pub train: ImageSet,
    pub test: ImageSet,
}

impl SyntheticTask {
    pub fn pixels(&self) -> usize {
        self.config.image_side * self.config.image_side
    }

    /// Accuracy of assigning each test image to its closest prototype.
    pub fn nearest_prototype_accuracy(&self) -> f64 {
        let correct = (0..self.test.len())
            .filter(|&i| {
                let x = self.test.image(i);
                let best = self
                    .prototypes
                    .iter()
                    .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f32>())
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(c, _)| c)
                    .unwrap();
                best == self.test.labels[i] as usize
            })
            .count();
        correct as f64 / self.test.len() as f64
    }
}

fn sample_set<R: Rng>(rng: &mut R, prototypes: &[Vec<f32>], n: usize, noise: &Normal<f32>) -> ImageSet {
    let k = prototypes.len();
    let pixels = prototypes[0].len();
    let mut images = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // round-robin labels keep the classes exactly balanced
        let c = i % k;
        images.extend(prototypes[c].iter().map(|&p| (p + noise.sample(rng)).clamp(0.0, 1.0)));
        labels.push(c as u8);
    }
    ImageSet {
        pixels,
        images,
        labels,
    }
}

/// Builds the task deterministically from `seed`.
pub fn make_task(config: &TaskConfig, seed: u64) -> SyntheticTask {
    let mut rng = rng(seed);
    let pixels = config.image_side * config.image_side;
    let prototypes: Vec<Vec<f32>> = (0..config.n_classes)
        .map(|_| {
            (0..pixels)
                .map(|_| 0.5 + config.contrast * (rng.random::<f32>() - 0.5))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, config.noise_std).expect("noise std must be finite and non-negative");
    let train = sample_set(&mut rng, &prototypes, config.n_train, &noise);
    let test = sample_set(&mut rng, &prototypes, config.n_test, &noise);
    SyntheticTask {
        config: config.clone(),
        seed,
        prototypes,
        train,
        test,
    }
}
