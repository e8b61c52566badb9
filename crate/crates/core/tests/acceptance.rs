//! Acceptance checks for the whole pipeline. Runs without the test harness
//! so every criterion prints exactly one PASS/FAIL line. Failures are
//! reported but only fail the process when `ACCEPTANCE_STRICT=1`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use trojan_weights::detector::logreg::{gradient, objective};
use trojan_weights::detector::{train_logreg, LogRegOptions, TrainingSummary};
use trojan_weights::experiment::{
    distribution_shift, holdout_trials, learning_curve, mean_auc, write_rows_csv, ExperimentRow, Population,
};
use trojan_weights::feature_select::{feature_auc_scores, select_top_weights, TensorScore};
use trojan_weights::metrics::{cross_entropy, roc_auc, roc_curve, trapezoid_area, DEFAULT_CLAMP};
use trojan_weights::preprocess::{feature_columns, process_model};
use trojan_weights::weight_store::{common_architecture, decode_model, encode_model};
use trojan_weights::zoo::{generate_zoo, split_by_trigger, train_zoo, Mlp, ZooConfig, ZooModelStats, FC3_ARCH};
use trojan_weights::{
    fit_detector, save_detector, ArchitectureSignature, ConfigFlags, Detector, DetectorOptions, FeatureMatrix,
    Manifest, ManifestEntry, ModelWeights, NamedConfig, NormMethod, PreprocessConfig, Regularization,
};

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The 100 clean / 100 poisoned population shared by the zoo-based checks.
struct Zoo {
    models: Vec<ModelWeights>,
    labels: Vec<u8>,
    manifest: Manifest,
    stats: Vec<ZooModelStats>,
}

impl Zoo {
    fn population(&self) -> Population<'_> {
        Population::new(&self.models, &self.labels)
    }

    /// Models and labels of the manifest's rows, matched by id.
    fn select(&self, manifest: &Manifest) -> (Vec<ModelWeights>, Vec<u8>) {
        manifest
            .models
            .iter()
            .map(|e| {
                let i = self.manifest.models.iter().position(|m| m.id == e.id).unwrap();
                (self.models[i].clone(), self.labels[i])
            })
            .unzip()
    }
}

fn zoo() -> &'static Zoo {
    static ZOO: OnceLock<Zoo> = OnceLock::new();
    ZOO.get_or_init(|| {
        let config = ZooConfig {
            n_clean: 100,
            n_poisoned: 100,
            seed: 2024,
            ..ZooConfig::default()
        };
        let trained = train_zoo(&config).expect("population zoo trains");
        let manifest = Manifest::new(
            trained
                .iter()
                .map(|m| ManifestEntry {
                    id: m.stats.id.clone(),
                    path: format!("models/{}.mws", m.stats.id),
                    architecture: m.stats.arch.clone(),
                    label: Some(m.label),
                })
                .collect(),
        )
        .unwrap();
        Zoo {
            labels: trained.iter().map(|m| m.label).collect(),
            stats: trained.iter().map(|m| m.stats.clone()).collect(),
            models: trained.into_iter().map(|m| m.weights).collect(),
            manifest,
        }
    })
}

/// Scratch-trained models have no common ancestor, so reference
/// subtraction is switched off.
fn scratch(config: NamedConfig) -> DetectorOptions {
    DetectorOptions::new(config.flags().without_reference())
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = common::seeded(1);
    let (mut mismatches, mut worst_area) = (0, 0.0f64);
    for _ in 0..1000 {
        let n = r.random_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
        labels[0] = 0;
        labels[1] = 1;
        labels.shuffle(&mut r);
        let levels = r.random_range(1..=8);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / 7.0).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        if auc != common::brute_force_auc(&scores, &labels) {
            mismatches += 1;
        }
        let area = trapezoid_area(&roc_curve(&scores, &labels).unwrap());
        worst_area = worst_area.max((area - auc).abs());
    }
    let ce = cross_entropy(&[0.5; 6], &[0, 1, 1, 0, 1, 0], DEFAULT_CLAMP).unwrap();
    let ce_err = (ce - std::f64::consts::LN_2).abs();
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && ce_err <= 1e-12 && worst_area <= 1e-12 && elapsed < Duration::from_secs(10),
        format!(
            "{mismatches} AUC mismatches in 1000, |CE-ln2| {ce_err:.1e}, max |area-AUC| {worst_area:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn random_problem<R: Rng>(r: &mut R, n: usize, d: usize) -> (FeatureMatrix, Vec<u8>) {
    let x = FeatureMatrix::from_rows(
        (0..n)
            .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect(),
    )
    .unwrap();
    let mut y: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
    y[0] = 0;
    y[1] = 1;
    (x, y)
}

fn optimizer_correctness() -> Outcome {
    let mut r = common::seeded(2);
    let mut worst_rel = 0.0f64;
    for _ in 0..20 {
        let (n, d) = (r.random_range(3..15), r.random_range(1..8));
        let (x, y) = random_problem(&mut r, n, d);
        let w: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let b = r.random_range(-1.0..1.0);
        let p = 10f64.powf(r.random_range(-2.0..2.0));
        let (gw, gb) = gradient(&x, &y, &w, b, p);
        let h = 1e-5;
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for k in 0..=d {
            let eval = |delta: f64| {
                let mut w2 = w.clone();
                let mut b2 = b;
                if k < d {
                    w2[k] += delta;
                } else {
                    b2 += delta;
                }
                objective(&x, &y, &w2, b2, p)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let g = if k < d { gw[k] } else { gb };
            diff2 += (fd - g) * (fd - g);
            norm2 += g * g;
        }
        worst_rel = worst_rel.max(diff2.sqrt() / norm2.sqrt().max(1e-12));
    }

    let mut monotone = true;
    for t in 0..20 {
        // alternate tall and wide problems to exercise both Newton solvers
        let (n, d) = if t % 2 == 0 { (30, 5) } else { (12, 40) };
        let (x, y) = random_problem(&mut r, n, d);
        let fit = train_logreg(&x, &y, 10f64.powf(r.random_range(-2.0..3.0)), &LogRegOptions::default()).unwrap();
        monotone &= fit.objective_trace.windows(2).all(|w| w[1] <= w[0]);
    }

    let pair = FeatureMatrix::from_rows(vec![vec![-1.0], vec![1.0]]).unwrap();
    let fit = train_logreg(&pair, &[0, 1], 1.0, &LogRegOptions::default()).unwrap();
    verdict(
        worst_rel < 1e-5 && monotone && fit.bias.abs() <= 1e-6,
        format!(
            "max gradient rel. error {worst_rel:.1e}, monotone objective {monotone}, antisymmetric b {:.1e}",
            fit.bias
        ),
    )
}

fn permutation_invariance() -> Outcome {
    let zoo = zoo();
    let mut options = scratch(NamedConfig::D);
    options.regularization = Regularization::Fixed(1.0);
    let detector = fit_detector(&zoo.models, &zoo.labels, None, &options).unwrap();
    let sig = common_architecture(&zoo.models).unwrap();
    let config = |sorted| PreprocessConfig {
        reference: None,
        norm: NormMethod::Tensor,
        sorted,
        tensor_whitelist: None,
    };
    let (sorted, unsorted) = (config(true), config(false));

    let mut r = common::seeded(3);
    let (mut identical, mut differing, mut total, mut worst) = (0, 0, 0, 0.0f64);
    for i in index::sample(&mut r, zoo.models.len(), 50) {
        let model = &zoo.models[i];
        let mlp = Mlp::from_weights(model).unwrap();
        let base_sorted = process_model(model, &sorted, &sig).unwrap();
        let base_unsorted = process_model(model, &unsorted, &sig).unwrap();
        let base_prob = detector.predict_proba(model).unwrap();
        for _ in 0..20 {
            let mut permuted = mlp.clone();
            for (layer, width) in [(0, 64), (1, 32)] {
                let mut perm: Vec<usize> = (0..width).collect();
                perm.shuffle(&mut r);
                permuted.permute_hidden(layer, &perm).unwrap();
            }
            let weights = permuted.to_weights(FC3_ARCH);
            total += 1;
            identical += (process_model(&weights, &sorted, &sig).unwrap() == base_sorted) as usize;
            differing += (process_model(&weights, &unsorted, &sig).unwrap() != base_unsorted) as usize;
            worst = worst.max((detector.predict_proba(&weights).unwrap() - base_prob).abs());
        }
    }
    verdict(
        identical == total && worst <= 1e-9 && differing as f64 >= 0.95 * total as f64,
        format!("sorted rows identical {identical}/{total}, max |dp| {worst:.1e}, unsorted rows differ {differing}/{total}"),
    )
}

fn reference_shift() -> Outcome {
    let zoo = zoo();
    let train: Vec<usize> = (0..30).chain(100..130).collect();
    let models: Vec<ModelWeights> = train.iter().map(|&i| zoo.models[i].clone()).collect();
    let labels: Vec<u8> = train.iter().map(|&i| zoo.labels[i]).collect();
    let reference = &zoo.models[199];
    let flags = |reference| ConfigFlags {
        reference,
        norm: NormMethod::None,
        tensor_selection: false,
        sorted: false,
    };
    let fit = |f: ConfigFlags, reference: Option<&ModelWeights>| {
        let mut o = DetectorOptions::new(f);
        o.regularization = Regularization::Fixed(1.0);
        fit_detector(&models, &labels, reference, &o).unwrap()
    };
    let raw = fit(flags(false), None);
    let shifted = fit(flags(true), Some(reference));
    if raw.features != shifted.features {
        return Err("reference subtraction changed the selected weights".into());
    }
    let max_dw = raw
        .weights
        .iter()
        .zip(&shifted.weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let t = raw.features_of(reference).unwrap();
    let wt: f64 = shifted.weights.iter().zip(&t).map(|(w, v)| w * v).sum();
    let db = (shifted.bias - (raw.bias + wt)).abs();
    let held_out: Vec<ModelWeights> = (30..100).chain(130..199).map(|i| zoo.models[i].clone()).collect();
    let pa = raw.predict_batch(&held_out).unwrap();
    let pb = shifted.predict_batch(&held_out).unwrap();
    let dp = pa.iter().zip(&pb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    verdict(
        max_dw <= 1e-6 && db <= 1e-6 && dp <= 1e-6,
        format!("max |dW| {max_dw:.1e}, |b_ref - (b + W.T_ref)| {db:.1e}, max |dp| {dp:.1e}"),
    )
}

/// Every file under `dir`, keyed by relative path.
fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn zoo_quality() -> Outcome {
    let start = Instant::now();
    let config = ZooConfig {
        n_clean: 20,
        n_poisoned: 20,
        seed: 77,
        ..ZooConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, stats) = generate_zoo(&config, a.path()).unwrap();
    generate_zoo(&config, b.path()).unwrap();
    let same = dir_bytes(a.path()) == dir_bytes(b.path());

    let clean: Vec<f64> = stats.models.iter().filter(|m| m.asr.is_none()).map(|m| m.clean_accuracy).collect();
    let mean_clean = clean.iter().sum::<f64>() / clean.len() as f64;
    let poisoned: Vec<&ZooModelStats> = stats.models.iter().filter(|m| m.asr.is_some()).collect();
    let min_asr = poisoned.iter().map(|m| m.asr.unwrap()).fold(1.0, f64::min);
    let max_gap = poisoned
        .iter()
        .map(|m| mean_clean - m.clean_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let elapsed = start.elapsed();
    verdict(
        stats.models.len() == 40 && min_asr >= 0.95 && max_gap <= 0.05 && same && elapsed < Duration::from_secs(600),
        format!(
            "40 models, mean clean acc {mean_clean:.3}, min ASR {min_asr:.3}, max acc gap {max_gap:.3}, \
             regenerated bytes identical {same}, {:.0}s for two generations",
            elapsed.as_secs_f64()
        ),
    )
}

fn sorting_ablation() -> Outcome {
    let configs = vec![
        ("D".to_string(), scratch(NamedConfig::D)),
        ("Base".to_string(), scratch(NamedConfig::Base)),
    ];
    let rows = holdout_trials(zoo().population(), &configs, 0.1, 10, 100).unwrap();
    let (d, base) = (mean_auc(&rows, "D", None), mean_auc(&rows, "Base", None));
    verdict(
        d >= 0.9 && d - base >= 0.15,
        format!("mean held-out AUC over 10 trials: D {d:.3}, Base {base:.3}, difference {:.3}", d - base),
    )
}

fn learning_curve_growth() -> Outcome {
    let rows = learning_curve(zoo().population(), "D", &scratch(NamedConfig::D), &[10, 100], 0.1, 10, 200).unwrap();
    let (small, large) = (mean_auc(&rows, "D", Some(10)), mean_auc(&rows, "D", Some(100)));
    verdict(
        large - small >= 0.1,
        format!("D mean AUC: 10 models {small:.3}, 100 models {large:.3}, gain {:.3}", large - small),
    )
}

fn distribution_shift_check() -> Outcome {
    let zoo = zoo();
    let (checker, water) = split_by_trigger(&zoo.manifest, &zoo.stats).unwrap();
    let (cm, cy) = zoo.select(&checker);
    let (wm, wy) = zoo.select(&water);
    let configs = vec![
        ("D".to_string(), scratch(NamedConfig::D)),
        ("Base".to_string(), scratch(NamedConfig::Base)),
    ];
    let rows = distribution_shift(Population::new(&cm, &cy), Population::new(&wm, &wy), &configs, 300).unwrap();
    let auc = |config: &str, trial: &str| {
        rows.iter()
            .find(|r: &&ExperimentRow| r.config == config && r.trial == trial)
            .unwrap()
            .auc
    };
    let (d_cw, d_wc) = (auc("D", "a_to_b"), auc("D", "b_to_a"));
    let (b_cw, b_wc) = (auc("Base", "a_to_b"), auc("Base", "b_to_a"));
    verdict(
        d_cw >= 0.7 && d_wc >= 0.7 && d_cw > b_cw && d_wc > b_wc,
        format!(
            "checkerboard->watermark D {d_cw:.3} vs Base {b_cw:.3}; watermark->checkerboard D {d_wc:.3} vs Base {b_wc:.3}"
        ),
    )
}

fn feature_selection_oracle() -> Outcome {
    let (n, d) = (100, 10_000);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let planted_noise = Normal::new(0.0, 0.5).unwrap();
    let mut hits = 0;
    let mut last = None;
    for run in 0..20 {
        let mut r = common::seeded(900 + run);
        let mut y = common::half_labels(n);
        y.shuffle(&mut r);
        let planted = r.random_range(0..=d);
        let rows = y
            .iter()
            .map(|&label| {
                (0..=d)
                    .map(|j| {
                        if j == planted {
                            label as f64 + planted_noise.sample(&mut r)
                        } else {
                            unit.sample(&mut r)
                        }
                    })
                    .collect()
            })
            .collect();
        let x = FeatureMatrix::from_rows(rows).unwrap();
        let scores = feature_auc_scores(&x, &y).unwrap();
        let top = select_top_weights(&scores, 1000);
        hits += top.iter().take(10).any(|f| f.position == planted) as usize;
        last = Some((x, y, scores));
    }

    let (x, y, scores) = last.unwrap();
    let mut r = common::seeded(999);
    let mut worst = 0.0f64;
    for j in index::sample(&mut r, x.n_cols(), 100) {
        let col = FeatureMatrix::from_rows(x.column(j).into_iter().map(|v| vec![v]).collect()).unwrap();
        let fit = train_logreg(&col, &y, 1.0, &LogRegOptions::default()).unwrap();
        let logits: Vec<f64> = (0..col.n_rows()).map(|i| fit.logit(col.row(i))).collect();
        let sigma = (roc_auc(&logits, &y).unwrap() - 0.5).abs();
        worst = worst.max((sigma - scores[j].sigma).abs());
    }
    verdict(
        hits >= 19 && worst <= 1e-9,
        format!("planted column in top 10 in {hits}/20 runs, max |sigma - sigma_1d_logreg| {worst:.1e}"),
    )
}

fn random_detector<R: Rng>(r: &mut R) -> Detector {
    let layout: Vec<(String, Vec<usize>)> = (0..r.random_range(1..4))
        .map(|i| (format!("t{i}"), (0..r.random_range(1..3)).map(|_| r.random_range(1..5)).collect()))
        .collect();
    let layout_ref: Vec<(&str, Vec<usize>)> = layout.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
    let template = common::random_model(r, &layout_ref);
    let signature = ArchitectureSignature::of(&template);
    let columns = feature_columns(&signature);
    let k = r.random_range(1..=columns.len());
    let features: Vec<_> = index::sample(r, columns.len(), k).into_iter().map(|j| columns[j].clone()).collect();
    let norm = [NormMethod::None, NormMethod::Tensor, NormMethod::Model][r.random_range(0..3)];
    Detector {
        preprocess: PreprocessConfig {
            reference: r.random::<bool>().then(|| common::random_model(r, &layout_ref)),
            norm,
            sorted: r.random(),
            tensor_whitelist: Some(signature.names().map(String::from).collect()),
        },
        signature: signature.clone(),
        weights: (0..k).map(|_| r.random_range(-5.0..5.0)).collect(),
        features,
        bias: r.random_range(-5.0..5.0),
        p: 10f64.powf(r.random_range(-4.0..4.0)),
        training_summary: TrainingSummary {
            n_models: r.random_range(4..500),
            n_poisoned: r.random_range(2..4),
            cv_cross_entropy: r.random::<bool>().then(|| r.random()),
            cv_per_p: (0..r.random_range(0..5)).map(|_| (r.random(), r.random())).collect(),
            tensor_scores: signature
                .names()
                .map(|name| TensorScore {
                    tensor_name: name.to_string(),
                    mean_validation_auc: r.random(),
                    n_splits: 5,
                })
                .collect(),
            converged: r.random(),
            iterations: r.random_range(0..100),
        },
    }
}

fn determinism_and_round_trips() -> Outcome {
    let small = ZooConfig {
        n_clean: 3,
        n_poisoned: 3,
        seed: 5,
        ..ZooConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_zoo(&small, a.path()).unwrap();
    generate_zoo(&small, b.path()).unwrap();
    let zoo_same = dir_bytes(a.path()) == dir_bytes(b.path());

    let z = zoo();
    let subset: Vec<usize> = (0..20).chain(100..120).collect();
    let models: Vec<ModelWeights> = subset.iter().map(|&i| z.models[i].clone()).collect();
    let labels: Vec<u8> = subset.iter().map(|&i| z.labels[i]).collect();
    let options = scratch(NamedConfig::D).with_seed(9);
    for (dir, name) in [(&a, "d.json"), (&b, "d.json")] {
        let det = fit_detector(&models, &labels, None, &options).unwrap();
        save_detector(dir.path().join(name), &det).unwrap();
    }
    let det_same = fs::read(a.path().join("d.json")).unwrap() == fs::read(b.path().join("d.json")).unwrap();

    let mut quick = scratch(NamedConfig::E);
    quick.regularization = Regularization::Fixed(1.0);
    let configs = vec![("E".to_string(), quick)];
    for dir in [&a, &b] {
        let rows = holdout_trials(Population::new(&models, &labels), &configs, 0.25, 3, 11).unwrap();
        write_rows_csv(dir.path().join("rows.csv"), &rows).unwrap();
    }
    let csv_same = fs::read(a.path().join("rows.csv")).unwrap() == fs::read(b.path().join("rows.csv")).unwrap();

    let mut r = common::seeded(10);
    let mut mws_ok = 0;
    let mut det_ok = 0;
    for _ in 0..100 {
        let layout: Vec<(String, Vec<usize>)> = (0..r.random_range(0..5))
            .map(|i| (format!("w{i}"), (0..r.random_range(0..4)).map(|_| r.random_range(1..6)).collect()))
            .collect();
        let layout_ref: Vec<(&str, Vec<usize>)> = layout.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
        let m = common::random_model(&mut r, &layout_ref);
        mws_ok += (decode_model(&encode_model(&m)).unwrap() == m) as usize;
        let d = random_detector(&mut r);
        det_ok += (Detector::from_json(&d.to_json().unwrap()).unwrap() == d) as usize;
    }
    verdict(
        zoo_same && det_same && csv_same && mws_ok == 100 && det_ok == 100,
        format!(
            "zoo bytes identical {zoo_same}, detector bytes identical {det_same}, CSV bytes identical {csv_same}, \
             MWS round-trips {mws_ok}/100, detector round-trips {det_ok}/100"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracles", metric_oracles),
        ("optimizer correctness", optimizer_correctness),
        ("permutation invariance", permutation_invariance),
        ("reference-shift equivalence", reference_shift),
        ("zoo quality", zoo_quality),
        ("sorting ablation", sorting_ablation),
        ("learning curve", learning_curve_growth),
        ("distribution shift", distribution_shift_check),
        ("feature-selection oracle", feature_selection_oracle),
        ("determinism and round-trips", determinism_and_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:2} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
