//! Held-out AUC as a function of the number of training models.
//!
//! cargo run --release --example learning_curve

use trojan_weights::experiment::{learning_curve, mean_auc, Population};
use trojan_weights::zoo::{train_zoo, ZooConfig};
use trojan_weights::{DetectorOptions, ModelWeights, NamedConfig};

fn main() -> trojan_weights::Result<()> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 30,
        n_poisoned: 30,
        seed: 6,
        ..ZooConfig::default()
    })?;
    let (models, labels): (Vec<ModelWeights>, Vec<u8>) = zoo.into_iter().map(|m| (m.weights, m.label)).unzip();
    let options = DetectorOptions::new(NamedConfig::D.flags().without_reference());
    let sizes = [6, 12, 24, 40];
    let rows = learning_curve(Population::new(&models, &labels), "D", &options, &sizes, 0.2, 5, 0)?;
    for n in sizes {
        println!("{n:>3} training models: mean AUC {:.3}", mean_auc(&rows, "D", Some(n)));
    }
    Ok(())
}
