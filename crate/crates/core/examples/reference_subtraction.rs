//! Without normalization or sorting, subtracting a reference model only
//! shifts the logistic-regression bias by `W . t_ref`.
//!
//! cargo run --release --example reference_subtraction

use trojan_weights::zoo::{train_zoo, ZooConfig};
use trojan_weights::{fit_detector, ConfigFlags, DetectorOptions, ModelWeights, NormMethod, Regularization};

fn main() -> trojan_weights::Result<()> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 8,
        n_poisoned: 8,
        seed: 4,
        ..ZooConfig::default()
    })?;
    let (models, labels): (Vec<ModelWeights>, Vec<u8>) = zoo.into_iter().map(|m| (m.weights, m.label)).unzip();
    let reference = models.last().unwrap().clone();

    let fit = |reference_on: bool| {
        let flags = ConfigFlags {
            reference: reference_on,
            norm: NormMethod::None,
            tensor_selection: false,
            sorted: false,
        };
        let mut options = DetectorOptions::new(flags);
        options.regularization = Regularization::Fixed(1.0);
        fit_detector(&models, &labels, Some(&reference), &options)
    };
    let raw = fit(false)?;
    let shifted = fit(true)?;

    let t = raw.features_of(&reference)?;
    let wt: f64 = shifted.weights.iter().zip(&t).map(|(w, v)| w * v).sum();
    println!("same features: {}", raw.features == shifted.features);
    println!("b_raw {:.6}, b_ref {:.6}, b_raw + W.t {:.6}", raw.bias, shifted.bias, raw.bias + wt);
    let pa = raw.predict_batch(&models)?;
    let pb = shifted.predict_batch(&models)?;
    let max_dp = pa.iter().zip(&pb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max prediction difference {max_dp:.3e}");
    Ok(())
}
