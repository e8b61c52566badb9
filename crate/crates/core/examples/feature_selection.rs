//! Rank individual weights by single-feature AUC and by correlation, and
//! rank tensors by how well a detector on each one generalizes.
//!
//! cargo run --release --example feature_selection

use trojan_weights::detector::select_features;
use trojan_weights::feature_select::{feature_correlation_scores, top_k_positions};
use trojan_weights::zoo::{train_zoo, ZooConfig};
use trojan_weights::{DetectorOptions, ModelWeights, NamedConfig};

fn main() -> trojan_weights::Result<()> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 12,
        n_poisoned: 12,
        seed: 8,
        ..ZooConfig::default()
    })?;
    let (models, labels): (Vec<ModelWeights>, Vec<u8>) = zoo.into_iter().map(|m| (m.weights, m.label)).unzip();
    let options = DetectorOptions::new(NamedConfig::D.flags().without_reference());
    let selected = select_features(&models, &labels, None, &options)?;

    for t in &selected.tensor_scores {
        println!("tensor {:<10} mean validation AUC {:.3}", t.tensor_name, t.mean_validation_auc);
    }
    for s in selected.scores.iter().take(5) {
        println!("{}[{}] sigma {:.3}", s.index.tensor, s.index.position, s.sigma);
    }

    let corr = feature_correlation_scores(&selected.matrix, &labels)?;
    for j in top_k_positions(&corr, 5) {
        let f = &selected.matrix.columns[j];
        println!("by correlation: {}[{}] r {:.3}", f.tensor, f.position, corr[j]);
    }
    Ok(())
}
