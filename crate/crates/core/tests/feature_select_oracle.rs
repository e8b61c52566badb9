mod common;

use rand::Rng;
use trojan_weights::feature_select::{
    column_sigmas, feature_auc_scores, feature_correlation_scores, select_top_weights, tensor_generalization_scores,
    TensorSplitSpec,
};
use trojan_weights::preprocess::NormMethod;
use trojan_weights::weight_store::common_architecture;
use trojan_weights::{FeatureMatrix, ModelWeights, PreprocessConfig};

fn random_matrix(seed: u64, n: usize, d: usize, levels: i32) -> FeatureMatrix {
    let mut r = common::seeded(seed);
    FeatureMatrix::from_rows(
        (0..n)
            .map(|_| (0..d).map(|_| r.random_range(0..levels) as f64).collect())
            .collect(),
    )
    .unwrap()
}

#[test]
fn sigma_matches_pairwise_oracle() {
    for seed in 0..20 {
        let x = random_matrix(seed, 17, 12, 4);
        let y = common::half_labels(17);
        let sigmas = column_sigmas(&x, &y).unwrap();
        for (j, s) in sigmas.iter().enumerate() {
            let expected = (common::brute_force_auc(&x.column(j), &y) - 0.5).abs();
            assert_eq!(*s, expected, "seed {seed} column {j}");
        }
    }
}

#[test]
fn sigma_is_sign_symmetric() {
    let x = random_matrix(5, 20, 8, 100);
    let neg = FeatureMatrix::from_rows(
        (0..20)
            .map(|i| x.row(i).iter().map(|v| -v).collect())
            .collect(),
    )
    .unwrap();
    let y = common::half_labels(20);
    // 1 - AUC rounds differently from AUC, hence the tolerance
    for (a, b) in column_sigmas(&x, &y).unwrap().iter().zip(column_sigmas(&neg, &y).unwrap()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn correlation_matches_two_pass_pearson() {
    let mut r = common::seeded(9);
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|_| (0..5).map(|_| r.random_range(-3.0..3.0)).collect())
        .collect();
    let x = FeatureMatrix::from_rows(rows.clone()).unwrap();
    let y = common::half_labels(30);
    let scores = feature_correlation_scores(&x, &y).unwrap();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    for (j, s) in scores.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|row| row[j]).collect();
        let mx = col.iter().sum::<f64>() / 30.0;
        let my = yf.iter().sum::<f64>() / 30.0;
        let sxy: f64 = col.iter().zip(&yf).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = col.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = yf.iter().map(|b| (b - my).powi(2)).sum();
        assert!((s - (sxy / (sxx * syy).sqrt()).abs()).abs() < 1e-12);
    }
}

#[test]
fn ties_keep_provenance_order() {
    let x = FeatureMatrix::from_rows(vec![vec![1.0, 1.0, 0.0, 1.0], vec![2.0, 2.0, 0.0, 2.0]]).unwrap();
    let y = vec![0, 1];
    let scores = feature_auc_scores(&x, &y).unwrap();
    let picked = select_top_weights(&scores, 3);
    let positions: Vec<usize> = picked.iter().map(|f| f.position).collect();
    assert_eq!(positions, vec![0, 1, 3]);
}

#[test]
fn tensor_scores_are_deterministic_and_find_the_signal() {
    let mut r = common::seeded(21);
    let layout = [("noise", vec![20]), ("signal", vec![20])];
    let y = common::half_labels(40);
    let models: Vec<ModelWeights> = y
        .iter()
        .map(|&label| {
            let mut m = common::random_model(&mut r, &layout);
            let mut t: Vec<trojan_weights::WeightTensor> = m.tensors().to_vec();
            let shifted: Vec<f32> = t[1].data().iter().map(|v| v + 1.5 * label as f32).collect();
            t[1] = trojan_weights::WeightTensor::new("signal", vec![20], shifted).unwrap();
            m = ModelWeights::new(t, Default::default()).unwrap();
            m
        })
        .collect();
    let sig = common_architecture(&models).unwrap();
    let base = PreprocessConfig {
        reference: None,
        norm: NormMethod::None,
        sorted: false,
        tensor_whitelist: None,
    };
    let spec = TensorSplitSpec {
        seed: 4,
        ..TensorSplitSpec::default()
    };
    let a = tensor_generalization_scores(&models, &y, &base, &sig, &spec).unwrap();
    let b = tensor_generalization_scores(&models, &y, &base, &sig, &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].tensor_name, "noise");
    assert_eq!(a[0].n_splits, 5);
    assert!(a[1].mean_validation_auc > 0.95, "{a:?}");
    assert!(a[1].mean_validation_auc > a[0].mean_validation_auc);
}
