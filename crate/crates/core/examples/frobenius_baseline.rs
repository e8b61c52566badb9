//! Per-tensor Frobenius norms as a tiny baseline feature set.
//!
//! cargo run --release --example frobenius_baseline

use trojan_weights::detector::{train_logreg, LogRegOptions};
use trojan_weights::metrics::roc_auc;
use trojan_weights::weight_store::frobenius_features;
use trojan_weights::zoo::{train_zoo, ZooConfig};
use trojan_weights::FeatureMatrix;

fn main() -> trojan_weights::Result<()> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 16,
        n_poisoned: 16,
        seed: 9,
        ..ZooConfig::default()
    })?;
    let rows: Vec<Vec<f64>> = zoo.iter().map(|m| frobenius_features(&m.weights)).collect();
    let labels: Vec<u8> = zoo.iter().map(|m| m.label).collect();
    let names: Vec<&str> = zoo[0].weights.tensors().iter().map(|t| t.name()).collect();
    println!("features: {names:?}");

    let (train, test): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|i| i % 2 == 0);
    let x = |idx: &[usize]| FeatureMatrix::from_rows(idx.iter().map(|&i| rows[i].clone()).collect());
    let y = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<u8>>();
    let fit = train_logreg(&x(&train)?, &y(&train), 1.0, &LogRegOptions::default())?;
    let test_x = x(&test)?;
    let scores: Vec<f64> = (0..test_x.n_rows()).map(|i| fit.predict_proba(test_x.row(i))).collect();
    println!("held-out AUC {:.3}", roc_auc(&scores, &y(&test))?);
    Ok(())
}
