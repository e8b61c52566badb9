//! Fully-connected ReLU classifier trained with minibatch SGD.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::ImageSet;
use crate::error::{Error, Result};
use crate::split::rng;
use crate::weight_store::{ModelWeights, WeightTensor, ARCH_KEY};

pub const FC3_ARCH: &str = "fc3";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.03,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs, inputs]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    fn init<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weight = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    fn forward(&self, x: &[f32], out: &mut [f32]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut rng = rng(seed);
        Self {
            layers: sizes.windows(2).map(|w| Layer::init(&mut rng, w[0], w[1])).collect(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Output logits for one input.
    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.outputs];
            layer.forward(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.forward(x))
    }

    pub fn accuracy(&self, data: &ImageSet) -> f64 {
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.image(i)) == data.labels[i] as usize)
            .count();
        correct as f64 / data.len() as f64
    }

    /// Tensors named `fc{k}.weight` / `fc{k}.bias`, layer by layer.
    pub fn to_weights(&self, arch: &str) -> ModelWeights {
        let mut tensors = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            tensors.push(
                WeightTensor::new(format!("fc{}.weight", i + 1), vec![l.outputs, l.inputs], l.weight.clone())
                    .expect("layer shape is consistent"),
            );
            tensors.push(
                WeightTensor::new(format!("fc{}.bias", i + 1), vec![l.outputs], l.bias.clone())
                    .expect("layer shape is consistent"),
            );
        }
        let metadata = BTreeMap::from([(ARCH_KEY.to_string(), arch.to_string())]);
        ModelWeights::new(tensors, metadata).expect("layer names are unique")
    }

    pub fn from_weights(model: &ModelWeights) -> Result<Self> {
        let mut layers = Vec::new();
        for k in 1.. {
            let Some(w) = model.tensor(&format!("fc{k}.weight")) else {
                break;
            };
            let b = model
                .tensor(&format!("fc{k}.bias"))
                .ok_or_else(|| Error::MissingTensor(format!("fc{k}.bias")))?;
            let &[outputs, inputs] = w.shape() else {
                return Err(Error::InvalidArgument(format!("fc{k}.weight is not a matrix")));
            };
            if b.len() != outputs {
                return Err(Error::InvalidArgument(format!("fc{k}.bias has the wrong length")));
            }
            layers.push(Layer {
                inputs,
                outputs,
                weight: w.data().to_vec(),
                bias: b.data().to_vec(),
            });
        }
        if layers.is_empty() {
            return Err(Error::MissingTensor("fc1.weight".into()));
        }
        Ok(Self { layers })
    }

    /// Reorders the hidden units after layer `layer` (0-based) by `perm`,
    /// leaving the network function unchanged: unit `perm[i]` moves to
    /// position `i`.
    pub fn permute_hidden(&mut self, layer: usize, perm: &[usize]) -> Result<()> {
        if layer + 1 >= self.layers.len() || perm.len() != self.layers[layer].outputs {
            return Err(Error::InvalidArgument("permutation does not match a hidden layer".into()));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        let (head, tail) = self.layers.split_at_mut(layer + 1);
        let cur = &mut head[layer];
        let next = &mut tail[0];
        let n_in = cur.inputs;
        cur.weight = perm
            .iter()
            .flat_map(|&p| cur.weight[p * n_in..(p + 1) * n_in].to_vec())
            .collect();
        cur.bias = perm.iter().map(|&p| cur.bias[p]).collect();
        let old = next.weight.clone();
        for o in 0..next.outputs {
            for (i, &p) in perm.iter().enumerate() {
                next.weight[o * next.inputs + i] = old[o * next.inputs + p];
            }
        }
        Ok(())
    }

    /// Minibatch SGD with momentum on softmax cross-entropy. Returns the
    /// mean training loss of the last epoch.
    pub fn train(&mut self, data: &ImageSet, config: &TrainConfig, seed: u64) -> Result<f64> {
        let mut rng = rng(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut velocity: Vec<(Vec<f32>, Vec<f32>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut grads = velocity.clone();
        let mut last_loss = f64::NAN;

        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0f64;
            for batch in order.chunks(config.batch_size) {
                for (gw, gb) in grads.iter_mut() {
                    gw.iter_mut().for_each(|v| *v = 0.0);
                    gb.iter_mut().for_each(|v| *v = 0.0);
                }
                for &i in batch {
                    epoch_loss += self.accumulate(data.image(i), data.labels[i] as usize, &mut grads) as f64;
                }
                let scale = config.learning_rate / batch.len() as f32;
                for (layer, ((vw, vb), (gw, gb))) in self.layers.iter_mut().zip(velocity.iter_mut().zip(&grads)) {
                    for ((w, v), g) in layer.weight.iter_mut().zip(vw.iter_mut()).zip(gw) {
                        *v = config.momentum * *v - scale * g;
                        *w += *v;
                    }
                    for ((b, v), g) in layer.bias.iter_mut().zip(vb.iter_mut()).zip(gb) {
                        *v = config.momentum * *v - scale * g;
                        *b += *v;
                    }
                }
            }
            last_loss = epoch_loss / data.len() as f64;
            if !last_loss.is_finite() {
                return Err(Error::Diverged(format!("training loss became {last_loss}")));
            }
        }
        Ok(last_loss)
    }

    /// Adds one sample's gradient into `grads` and returns its loss.
    fn accumulate(&self, x: &[f32], label: usize, grads: &mut [(Vec<f32>, Vec<f32>)]) -> f32 {
        let n = self.layers.len();
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(n + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            layer.forward(&acts[i], &mut out);
            if i + 1 < n {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }

        let logits = &acts[n];
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = logits.iter().map(|v| (v - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        let loss = sum.ln() + max - logits[label];
        let mut delta: Vec<f32> = exps.iter().map(|e| e / sum).collect();
        delta[label] -= 1.0;

        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input = &acts[i];
            let (gw, gb) = &mut grads[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, &v) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(&layer.weight[o * layer.inputs..(o + 1) * layer.inputs]) {
                        *p += d * w;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        loss
    }
}

fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}
