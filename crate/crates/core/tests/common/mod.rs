#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trojan_weights::split::rng;
use trojan_weights::{ModelWeights, WeightTensor};

pub fn seeded(seed: u64) -> ChaCha8Rng {
    rng(seed)
}

/// Pairwise AUC straight from the definition: wins plus half the ties over
/// all positive/negative pairs.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// A model with the given `(name, shape)` tensors filled with uniform values.
pub fn random_model<R: Rng>(r: &mut R, layout: &[(&str, Vec<usize>)]) -> ModelWeights {
    let tensors = layout
        .iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect();
            WeightTensor::new(*name, shape.clone(), data).unwrap()
        })
        .collect();
    ModelWeights::new(tensors, BTreeMap::new()).unwrap()
}

/// Labels with both classes present: the first half 0, the rest 1.
pub fn half_labels(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i >= n / 2) as u8).collect()
}
