//! Command-line front end. Every command writes its outputs plus a
//! `run.json` echoing the parsed flags into `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use trojan_weights::detector::{
    labeled_probabilities, log_grid, predict_manifest, read_predictions_csv, select_features, write_predictions_csv,
    CvSpec,
};
use trojan_weights::experiment::{
    distribution_shift, holdout_trials, learning_curve, with_means, write_rows_csv, Population,
};
use trojan_weights::metrics::{evaluate, roc_curve, write_metrics_json, write_roc_csv, DEFAULT_CLAMP};
use trojan_weights::weight_store::manifest_dir;
use trojan_weights::zoo::{generate_zoo, split_by_trigger, TriggerMix, ZooConfig, MANIFEST_FILE};
use trojan_weights::{
    fit_detector, load_detector, read_manifest, read_model, save_detector, write_manifest, DetectorOptions, Error,
    ModelWeights, NamedConfig, NormMethod, Regularization, Result,
};

#[derive(Parser)]
#[command(name = "trojan-weights", version, about = "Trojan detection from model weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scratch-trained model populations
    Zoo {
        #[command(subcommand)]
        command: ZooCommand,
    },
    /// Weight and tensor ranking
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
    /// Train, apply and score detectors
    Detector {
        #[command(subcommand)]
        command: DetectorCommand,
    },
    /// Repeated-holdout, learning-curve and distribution-shift runs
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
}

#[derive(Subcommand)]
enum ZooCommand {
    Generate(ZooArgs),
}

#[derive(Subcommand)]
enum FeaturesCommand {
    Select(SelectArgs),
}

#[derive(Subcommand)]
enum DetectorCommand {
    Train(TrainArgs),
    Predict(PredictArgs),
    Evaluate(EvaluateArgs),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Run(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MixArg {
    Checkerboard,
    Watermark,
    Both,
}

#[derive(Args, Serialize)]
struct ZooArgs {
    #[arg(long, default_value_t = 20)]
    n_clean: usize,
    #[arg(long, default_value_t = 20)]
    n_poisoned: usize,
    #[arg(long, value_enum, default_value_t = MixArg::Both)]
    trigger_mix: MixArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the number of training epochs
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Detector configuration shared by the commands that fit detectors.
#[derive(Args, Serialize, Clone)]
struct ConfigArgs {
    /// Named configuration: Base, A, B, C, D, E or F (experiments accept a
    /// comma-separated list)
    #[arg(long)]
    config: String,
    /// Reference model (MWS) for configurations that subtract one
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Switch reference subtraction off, for populations without a common
    /// ancestor
    #[arg(long)]
    no_reference: bool,
    /// Override the normalization of the named configuration
    #[arg(long)]
    norm: Option<String>,
    /// Override tensor selection of the named configuration
    #[arg(long)]
    tensor_selection: Option<bool>,
    /// Override sorting of the named configuration
    #[arg(long)]
    sorted: Option<bool>,
    #[arg(long, default_value_t = 1000)]
    weight_k: usize,
    #[arg(long, default_value_t = 25)]
    tensor_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    cv_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    p_grid_min: f64,
    #[arg(long, default_value_t = 1e4)]
    p_grid_max: f64,
    #[arg(long, default_value_t = 17)]
    p_grid_points: usize,
    /// Skip the regularization search and use this P
    #[arg(long)]
    fixed_p: Option<f64>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    /// Detector file written by `detector train`
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// Predictions CSV written by `detector predict`
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLAMP)]
    clamp: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Second population: train on each and test on the other
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0.1)]
    holdout_fraction: f64,
    /// Learning-curve mode: comma-separated training-set sizes
    #[arg(long, value_delimiter = ',')]
    train_sizes: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn prepare_out(out: &Path, command: &str, args: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_metrics_json(out.join("run.json"), &json!({ "command": command, "args": args }))
}

impl ConfigArgs {
    /// One `(name, options)` pair per comma-separated config name.
    fn resolve(&self) -> Result<Vec<(String, DetectorOptions)>> {
        self.config
            .split(',')
            .map(|name| {
                let named: NamedConfig = name.trim().parse()?;
                let mut flags = named.flags();
                if self.no_reference {
                    flags = flags.without_reference();
                }
                if let Some(n) = &self.norm {
                    flags.norm = n.parse::<NormMethod>()?;
                }
                if let Some(t) = self.tensor_selection {
                    flags.tensor_selection = t;
                }
                if let Some(s) = self.sorted {
                    flags.sorted = s;
                }
                let mut options = DetectorOptions::new(flags);
                options.weight_k = self.weight_k;
                options.tensor_k = self.tensor_k;
                options.regularization = match self.fixed_p {
                    Some(p) if p > 0.0 && p.is_finite() => Regularization::Fixed(p),
                    Some(p) => return Err(Error::InvalidArgument(format!("--fixed-p must be positive, got {p}"))),
                    None => Regularization::Search(CvSpec {
                        grid: self.grid()?,
                        iterations: self.cv_iters,
                        ..CvSpec::default()
                    }),
                };
                Ok((named.to_string(), options.with_seed(self.seed)))
            })
            .collect()
    }

    fn grid(&self) -> Result<Vec<f64>> {
        let (lo, hi) = (self.p_grid_min, self.p_grid_max);
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || self.p_grid_points == 0 {
            return Err(Error::InvalidArgument("P grid needs 0 < min <= max and at least one point".into()));
        }
        Ok(log_grid(lo, hi, self.p_grid_points))
    }

    fn single(&self) -> Result<DetectorOptions> {
        let mut all = self.resolve()?;
        if all.len() != 1 {
            return Err(Error::InvalidArgument("this command takes exactly one --config".into()));
        }
        Ok(all.remove(0).1)
    }

    fn reference_model(&self) -> Result<Option<ModelWeights>> {
        self.reference.as_ref().map(read_model).transpose()
    }
}

fn load_labeled(manifest_path: &Path) -> Result<(Vec<ModelWeights>, Vec<u8>)> {
    let manifest = read_manifest(manifest_path)?;
    let labels = manifest.labels()?;
    let models = manifest.load_models(&manifest_dir(manifest_path))?;
    Ok((models, labels))
}

fn zoo_generate(args: &ZooArgs) -> Result<()> {
    prepare_out(&args.out, "zoo generate", args)?;
    let mut config = ZooConfig {
        n_clean: args.n_clean,
        n_poisoned: args.n_poisoned,
        trigger_mix: match args.trigger_mix {
            MixArg::Checkerboard => TriggerMix::Checkerboard,
            MixArg::Watermark => TriggerMix::Watermark,
            MixArg::Both => TriggerMix::Both,
        },
        seed: args.seed,
        ..ZooConfig::default()
    };
    if let Some(e) = args.epochs {
        config.training.epochs = e;
    }
    let (manifest, stats) = generate_zoo(&config, &args.out)?;
    if config.trigger_mix == TriggerMix::Both && args.n_poisoned >= 2 {
        let (a, b) = split_by_trigger(&manifest, &stats.models)?;
        write_manifest(args.out.join("split_checkerboard.json"), &a)?;
        write_manifest(args.out.join("split_watermark.json"), &b)?;
    }
    println!("wrote {} models to {}", manifest.models.len(), args.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn features_select(args: &SelectArgs) -> Result<()> {
    prepare_out(&args.out, "features select", args)?;
    let options = args.config.single()?;
    let reference = args.config.reference_model()?;
    let (models, labels) = load_labeled(&args.manifest)?;
    let selected = select_features(&models, &labels, reference.as_ref(), &options)?;

    let path = args.out.join("features.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["rank", "tensor", "position", "sigma"])?;
    for (rank, s) in selected.scores.iter().enumerate() {
        w.write_record([
            rank.to_string(),
            s.index.tensor.clone(),
            s.index.position.to_string(),
            s.sigma.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io { path, source: e })?;

    if !selected.tensor_scores.is_empty() {
        let path = args.out.join("tensor_scores.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for s in &selected.tensor_scores {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::Io { path, source: e })?;
    }
    println!(
        "kept {} weights from {} tensors",
        selected.scores.len(),
        selected.signature.tensors.len()
    );
    Ok(())
}

fn detector_train(args: &TrainArgs) -> Result<()> {
    prepare_out(&args.out, "detector train", args)?;
    let options = args.config.single()?;
    let reference = args.config.reference_model()?;
    let (models, labels) = load_labeled(&args.manifest)?;
    let detector = fit_detector(&models, &labels, reference.as_ref(), &options)?;
    let path = args.out.join("detector.json");
    save_detector(&path, &detector)?;
    println!("P = {:e}; wrote {}", detector.p, path.display());
    Ok(())
}

fn detector_predict(args: &PredictArgs) -> Result<()> {
    prepare_out(&args.out, "detector predict", args)?;
    let detector = load_detector(&args.detector)?;
    let manifest = read_manifest(&args.manifest)?;
    let predictions = predict_manifest(&detector, &manifest, &args.manifest)?;
    let path = args.out.join("predictions.csv");
    write_predictions_csv(&path, &predictions)?;
    println!("scored {} models; wrote {}", predictions.len(), path.display());
    Ok(())
}

fn detector_evaluate(args: &EvaluateArgs) -> Result<()> {
    prepare_out(&args.out, "detector evaluate", args)?;
    let (probs, labels) = labeled_probabilities(&read_predictions_csv(&args.predictions)?)?;
    let report = evaluate(&probs, &labels, args.clamp)?;
    write_roc_csv(args.out.join("roc.csv"), &roc_curve(&probs, &labels)?)?;
    write_metrics_json(
        args.out.join("metrics.json"),
        &json!({
            "auc": report.auc,
            "ce": report.ce,
            "n_pos": report.n_pos,
            "n_neg": report.n_neg,
            "clamp": report.clamp,
            "args": args,
        }),
    )?;
    println!("auc {:.4} ce {:.4}", report.auc, report.ce);
    Ok(())
}

fn experiment_run(args: &ExperimentArgs) -> Result<()> {
    prepare_out(&args.out, "experiment run", args)?;
    let configs = args.config.resolve()?;
    let reference = args.config.reference_model()?;
    let (models, labels) = load_labeled(&args.manifest)?;
    let mut pop = Population::new(&models, &labels);
    pop.reference = reference.as_ref();
    let seed = args.config.seed;

    let rows = match (&args.test_manifest, args.train_sizes.is_empty()) {
        (Some(_), false) => {
            return Err(Error::InvalidArgument(
                "--test-manifest and --train-sizes cannot be combined".into(),
            ))
        }
        (Some(test), true) => {
            let (test_models, test_labels) = load_labeled(test)?;
            let other = Population {
                models: &test_models,
                labels: &test_labels,
                reference: reference.as_ref(),
            };
            distribution_shift(pop, other, &configs, seed)?
        }
        (None, false) => {
            let mut rows = Vec::new();
            for (name, options) in &configs {
                rows.extend(learning_curve(
                    pop,
                    name,
                    options,
                    &args.train_sizes,
                    args.holdout_fraction,
                    args.repeats,
                    seed,
                )?);
            }
            with_means(rows, seed)
        }
        (None, true) => with_means(
            holdout_trials(pop, &configs, args.holdout_fraction, args.repeats, seed)?,
            seed,
        ),
    };
    let path = args.out.join("results.csv");
    write_rows_csv(&path, &rows)?;
    for r in rows.iter().filter(|r| r.trial == "mean" || args.test_manifest.is_some()) {
        println!("{} {} n_train={} auc={:.4} ce={:.4}", r.config, r.trial, r.n_train, r.auc, r.ce);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Zoo {
            command: ZooCommand::Generate(a),
        } => zoo_generate(a),
        Command::Features {
            command: FeaturesCommand::Select(a),
        } => features_select(a),
        Command::Detector { command } => match command {
            DetectorCommand::Train(a) => detector_train(a),
            DetectorCommand::Predict(a) => detector_predict(a),
            DetectorCommand::Evaluate(a) => detector_evaluate(a),
        },
        Command::Experiment {
            command: ExperimentCommand::Run(a),
        } => experiment_run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": { "kind": e.kind(), "code": e.exit_code(), "message": e.to_string() } });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
