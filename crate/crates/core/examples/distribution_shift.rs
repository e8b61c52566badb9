//! Train on one trigger family and test on the other.
//!
//! cargo run --release --example distribution_shift

use trojan_weights::experiment::{distribution_shift, Population};
use trojan_weights::zoo::{split_by_trigger, train_zoo, ZooConfig};
use trojan_weights::{DetectorOptions, Manifest, ManifestEntry, ModelWeights, NamedConfig};

fn main() -> trojan_weights::Result<()> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 20,
        n_poisoned: 20,
        seed: 7,
        ..ZooConfig::default()
    })?;
    let manifest = Manifest::new(
        zoo.iter()
            .map(|m| ManifestEntry {
                id: m.stats.id.clone(),
                path: format!("models/{}.mws", m.stats.id),
                architecture: m.stats.arch.clone(),
                label: Some(m.label),
            })
            .collect(),
    )?;
    let stats: Vec<_> = zoo.iter().map(|m| m.stats.clone()).collect();
    let (checker, water) = split_by_trigger(&manifest, &stats)?;
    let pick = |part: &Manifest| -> (Vec<ModelWeights>, Vec<u8>) {
        part.models
            .iter()
            .map(|e| {
                let m = zoo.iter().find(|m| m.stats.id == e.id).unwrap();
                (m.weights.clone(), m.label)
            })
            .unzip()
    };
    let (cx, cy) = pick(&checker);
    let (wx, wy) = pick(&water);

    let configs: Vec<_> = [NamedConfig::Base, NamedConfig::D]
        .into_iter()
        .map(|c| (format!("{c:?}"), DetectorOptions::new(c.flags().without_reference())))
        .collect();
    let rows = distribution_shift(Population::new(&cx, &cy), Population::new(&wx, &wy), &configs, 0)?;
    for row in rows {
        // a_to_b: checkerboard -> watermark
        println!("{:>4} {}: AUC {:.3}", row.config, row.trial, row.auc);
    }
    Ok(())
}
