//! Fit a detector on a zoo, save it, reload it and score held-out models.
//!
//! cargo run --release --example train_detector

use trojan_weights::metrics::{evaluate, DEFAULT_CLAMP};
use trojan_weights::zoo::{train_zoo, ZooConfig};
use trojan_weights::{fit_detector, load_detector, save_detector, DetectorOptions, ModelWeights, NamedConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 16,
        n_poisoned: 16,
        seed: 2,
        ..ZooConfig::default()
    })?;
    // every fourth model is held out
    let (test, train): (Vec<_>, Vec<_>) = zoo.into_iter().enumerate().partition(|(i, _)| i % 4 == 0);
    let split = |v: Vec<(usize, trojan_weights::zoo::ZooModel)>| -> (Vec<ModelWeights>, Vec<u8>) {
        v.into_iter().map(|(_, m)| (m.weights, m.label)).unzip()
    };
    let (train_x, train_y) = split(train);
    let (test_x, test_y) = split(test);

    // scratch-trained models share no ancestor, so no reference is used
    let options = DetectorOptions::new(NamedConfig::D.flags().without_reference());
    let detector = fit_detector(&train_x, &train_y, None, &options)?;
    println!(
        "P = {:.3e}, {} weights kept, converged {}",
        detector.p,
        detector.features.len(),
        detector.training_summary.converged
    );

    let dir = std::env::temp_dir().join("trojan-weights-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("detector.json");
    save_detector(&path, &detector)?;
    let detector = load_detector(&path)?;

    let probs = detector.predict_batch(&test_x)?;
    let report = evaluate(&probs, &test_y, DEFAULT_CLAMP)?;
    println!("held-out AUC {:.3}, CE {:.3}", report.auc, report.ce);
    Ok(())
}
