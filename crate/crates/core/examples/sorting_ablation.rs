//! Repeated holdout comparing named preprocessing configs on one population.
//!
//! cargo run --release --example sorting_ablation

use trojan_weights::experiment::{holdout_trials, mean_auc, Population};
use trojan_weights::zoo::{train_zoo, ZooConfig};
use trojan_weights::{DetectorOptions, ModelWeights, NamedConfig};

fn main() -> trojan_weights::Result<()> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 30,
        n_poisoned: 30,
        seed: 5,
        ..ZooConfig::default()
    })?;
    let (models, labels): (Vec<ModelWeights>, Vec<u8>) = zoo.into_iter().map(|m| (m.weights, m.label)).unzip();

    let configs: Vec<_> = [NamedConfig::Base, NamedConfig::C, NamedConfig::D, NamedConfig::F]
        .into_iter()
        .map(|c| (format!("{c:?}"), DetectorOptions::new(c.flags().without_reference())))
        .collect();
    let rows = holdout_trials(Population::new(&models, &labels), &configs, 0.2, 5, 0)?;
    for (name, _) in &configs {
        println!("{name:>4}: mean AUC {:.3}", mean_auc(&rows, name, None));
    }
    Ok(())
}
