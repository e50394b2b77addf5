use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ndf::cascade::{synth_range, train_cascade_with, CascadeConfig, LandmarkSet};
use ndf::data::{RegressionSet, Samples};
use ndf::forest::{AssignmentScheme, Forest, LeafInit};
use ndf::io::{self, TrainingMeta};
use ndf::network::Network;
use ndf::saliency::{collect_scores, decisive_fraction, ScoreHistogram};
use ndf::training::{self, TrainConfig};
use ndf::{ClassificationSet, LeafMode, NdfError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "ndf",
    version,
    about = "Neural decision forests: training, tracing, histograms and cascades"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dataset {
    Mnist,
    Synth,
}

impl Dataset {
    fn name(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::Synth => "synth",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a forest (MNIST classification or synthetic landmark regression).
    Train {
        #[arg(long, value_enum)]
        dataset: Dataset,
        /// MNIST directory, or where to cache synthetic data.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        depth: usize,
        #[arg(long, default_value_t = 1)]
        trees: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Use only the first N training samples (MNIST) or generate N (synth, default 1000).
        #[arg(long)]
        samples: Option<usize>,
        /// Adam rate for regression leaves.
        #[arg(long, default_value_t = 0.5)]
        leaf_lr: f64,
    },
    /// Evaluate a forest on the held-out split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        dataset: Option<Dataset>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Export decision saliency maps along one test input's maximum-probability path.
    Trace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input_index: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        tree: usize,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Histogram of every routing probability over the held-out split.
    Hist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        dataset: Option<Dataset>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train a cascade of regression forests on synthetic faces.
    CascadeTrain {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        stages: usize,
        #[arg(long, default_value_t = 3)]
        trees: usize,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Epochs per stage.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Per-stage mean landmark error of a cascade.
    CascadeEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip this many samples of the seed's stream; defaults to the
        /// training count when the seed matches the training seed.
        #[arg(long)]
        skip: Option<usize>,
    },
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const SYNTH_TEST: usize = 200;

fn mnist_dir(dir: Option<&Path>, meta: Option<&TrainingMeta>) -> PathBuf {
    dir.map(Path::to_path_buf)
        .or_else(|| meta.and_then(|m| m.data_dir.clone()).map(PathBuf::from))
        .unwrap_or_else(|| io::default_mnist_dir("."))
}

/// Synthetic samples, read from or written to `dir` when given.
fn synth_data(
    dir: Option<&Path>,
    seed: u64,
    start: usize,
    count: usize,
) -> anyhow::Result<LandmarkSet> {
    let Some(dir) = dir else {
        return Ok(synth_range(seed, start, count));
    };
    let path = dir.join(format!("synth_s{seed}_{start}_{count}.ndfs"));
    if path.exists() {
        return Ok(io::read_synth_cache(&path)?);
    }
    std::fs::create_dir_all(dir)?;
    let set = synth_range(seed, start, count);
    io::write_synth_cache(&set, &path)?;
    Ok(set)
}

/// Held-out synthetic data for a model trained on the first `meta.samples`.
fn synth_holdout(meta: &TrainingMeta, dir: Option<&Path>) -> anyhow::Result<LandmarkSet> {
    synth_data(dir, meta.seed, meta.samples.unwrap_or(0), SYNTH_TEST)
}

fn dataset_of(
    forest: &Forest,
    flag: Option<Dataset>,
    meta: &TrainingMeta,
) -> anyhow::Result<Dataset> {
    let stored = match meta.dataset.as_deref() {
        Some("mnist") => Some(Dataset::Mnist),
        Some("synth") => Some(Dataset::Synth),
        _ => None,
    };
    let inferred = match forest.mode() {
        LeafMode::Classification => Dataset::Mnist,
        LeafMode::Regression => Dataset::Synth,
    };
    let d = flag.or(stored).unwrap_or(inferred);
    if d != inferred {
        bail!(usage(format!(
            "model is a {:?} forest and cannot run on {}",
            forest.mode(),
            d.name()
        )));
    }
    Ok(d)
}

enum Heldout {
    Mnist(ClassificationSet),
    Synth(RegressionSet, LandmarkSet),
}

impl Heldout {
    fn load(d: Dataset, data_dir: Option<&Path>, meta: &TrainingMeta) -> anyhow::Result<Self> {
        Ok(match d {
            Dataset::Mnist => {
                let dir = mnist_dir(data_dir, Some(meta));
                Heldout::Mnist(
                    io::load_mnist_test(&dir)
                        .with_context(|| format!("loading MNIST from {}", dir.display()))?,
                )
            }
            Dataset::Synth => {
                let set = synth_holdout(meta, data_dir)?;
                Heldout::Synth(set.to_regression_set()?, set)
            }
        })
    }

    fn inputs(&self) -> &Samples {
        match self {
            Heldout::Mnist(d) => &d.inputs,
            Heldout::Synth(r, _) => &r.inputs,
        }
    }
}

fn train(
    dataset: Dataset,
    data_dir: Option<PathBuf>,
    samples: Option<usize>,
    depth: usize,
    trees: usize,
    config: TrainConfig,
    out: &Path,
) -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let splits = trees * ((1usize << depth) - 1);
    let mut meta = TrainingMeta {
        seed: config.seed,
        epochs: config.epochs,
        batch_size: Some(config.batch_size),
        lr: Some(config.lr),
        dataset: Some(dataset.name().into()),
        data_dir: None,
        samples: None,
    };
    let print = |m: &ndf::EpochMetrics| {
        println!("{}", serde_json::to_string(m).expect("metrics serialize"))
    };
    let forest = match dataset {
        Dataset::Mnist => {
            let dir = mnist_dir(data_dir.as_deref(), None);
            let mut mnist = io::load_mnist(&dir)
                .with_context(|| format!("loading MNIST from {}", dir.display()))?;
            if let Some(n) = samples {
                mnist.train.truncate(n);
            }
            meta.samples = Some(mnist.train.len());
            meta.data_dir = Some(dir.display().to_string());
            let extractor = Network::shallow_cnn([1, 28, 28], splits, &mut rng)?;
            let mut forest = Forest::new(
                extractor,
                depth,
                trees,
                LeafInit::Classification(10),
                AssignmentScheme::Sequential,
                &mut rng,
            )?;
            training::train_classifier_with(&mut forest, &mnist.train, &config, print)?;
            forest
        }
        Dataset::Synth => {
            let n = samples.unwrap_or(1000);
            let set = synth_data(data_dir.as_deref(), config.seed, 0, n)?;
            meta.samples = Some(n);
            meta.data_dir = data_dir.map(|d| d.display().to_string());
            let data = set.to_regression_set()?;
            let extractor = Network::shallow_cnn([1, 64, 64], splits, &mut rng)?;
            let mut forest = Forest::new(
                extractor,
                depth,
                trees,
                LeafInit::Regression(data.dim),
                AssignmentScheme::Sequential,
                &mut rng,
            )?;
            training::train_regressor_with(&mut forest, &data, &config, print)?;
            forest
        }
    };
    io::save_model(&forest, &meta, out)?;
    Ok(())
}

fn eval(model: &Path, dataset: Option<Dataset>, data_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let (forest, meta) = io::load_model(model)?;
    let d = dataset_of(&forest, dataset, &meta)?;
    let report = match Heldout::load(d, data_dir.as_deref(), &meta)? {
        Heldout::Mnist(test) => json!({ "accuracy": training::accuracy(&forest, &test)? }),
        Heldout::Synth(reg, set) => {
            let preds = forest.predict_samples(&reg.inputs)?;
            let est: Vec<ndf::Shape> = preds.chunks(reg.dim).map(ndf::Shape::from_flat).collect();
            json!({ "mean_error": ndf::cascade::mean_landmark_error(&est, &set.shapes) })
        }
    };
    println!("{report}");
    Ok(())
}

fn trace(
    model: &Path,
    index: usize,
    tree: usize,
    out_dir: &Path,
    data_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (forest, meta) = io::load_model(model)?;
    if tree >= forest.trees.len() {
        bail!(usage(format!(
            "model has {} trees, --tree {tree} is out of range",
            forest.trees.len()
        )));
    }
    let d = dataset_of(&forest, None, &meta)?;
    let held = Heldout::load(d, data_dir.as_deref(), &meta)?;
    let inputs = held.inputs();
    if index >= inputs.len() {
        bail!(usage(format!(
            "--input-index {index} out of range (held-out split has {})",
            inputs.len()
        )));
    }
    let input = inputs.sample(index);
    let mut record = io::write_trace(&forest, input, tree, out_dir)?;
    record.input_index = Some(index);
    if let Heldout::Mnist(test) = &held {
        record.label = Some(test.labels[index]);
    }
    let hw = inputs.shape[1..].to_vec();
    let image = ndf::autodiff::Tensor::new(hw, input.iter().map(|v| v + 0.5).collect())?;
    io::export_pgm(&image, out_dir.join("input.pgm"))?;
    record.write_json(out_dir.join("path.json"))?;
    for m in &record.maps {
        println!("{}", m.file);
    }
    Ok(())
}

fn hist(
    model: &Path,
    dataset: Option<Dataset>,
    bins: usize,
    out: &Path,
    data_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    if bins < 2 {
        bail!(usage("--bins must be at least 2"));
    }
    let (forest, meta) = io::load_model(model)?;
    let d = dataset_of(&forest, dataset, &meta)?;
    let held = Heldout::load(d, data_dir.as_deref(), &meta)?;
    let scores = collect_scores(&forest, held.inputs())?;
    let h = ScoreHistogram::from_scores(&scores, bins)?;
    io::export_histogram_csv(&h, out)?;
    println!(
        "{}",
        json!({ "scores": h.total, "decisive_fraction": decisive_fraction(&scores, 0.05) })
    );
    Ok(())
}

fn cascade_train(samples: usize, config: CascadeConfig, out: &Path) -> anyhow::Result<()> {
    let data = synth_range(config.train.seed, 0, samples);
    let (model, _) = train_cascade_with(&data, &config, |r| {
        println!(
            "{}",
            json!({ "stage": r.stage, "train_error": r.train_error })
        );
    })?;
    let meta = TrainingMeta {
        seed: config.train.seed,
        epochs: config.train.epochs,
        batch_size: Some(config.train.batch_size),
        lr: Some(config.train.lr),
        dataset: Some("synth".into()),
        data_dir: None,
        samples: Some(samples),
    };
    io::save_cascade(&model, &meta, out)?;
    Ok(())
}

fn cascade_eval(
    model: &Path,
    samples: usize,
    seed: u64,
    skip: Option<usize>,
) -> anyhow::Result<()> {
    let (cascade, meta) = io::load_cascade(model)?;
    let skip = skip.unwrap_or(if seed == meta.seed {
        meta.samples.unwrap_or(0)
    } else {
        0
    });
    let data = synth_range(seed, skip, samples);
    let errors = cascade.stage_errors(&data)?;
    println!(
        "{}",
        json!({ "samples": samples, "seed": seed, "skip": skip, "stage_errors": errors })
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            dataset,
            data_dir,
            depth,
            trees,
            epochs,
            batch_size,
            lr,
            seed,
            out,
            samples,
            leaf_lr,
        } => {
            if !(1..=ndf::tree::MAX_DEPTH).contains(&depth) || trees == 0 {
                bail!(usage(format!(
                    "need 1 <= depth <= {} and at least one tree",
                    ndf::tree::MAX_DEPTH
                )));
            }
            let config = TrainConfig {
                epochs,
                batch_size,
                seed,
                lr,
                leaf_lr,
                ..TrainConfig::default()
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            train(dataset, data_dir, samples, depth, trees, config, &out)
        }
        Command::Eval {
            model,
            dataset,
            data_dir,
        } => eval(&model, dataset, data_dir),
        Command::Trace {
            model,
            input_index,
            out_dir,
            tree,
            data_dir,
        } => trace(&model, input_index, tree, &out_dir, data_dir),
        Command::Hist {
            model,
            dataset,
            bins,
            out,
            data_dir,
        } => hist(&model, dataset, bins, &out, data_dir),
        Command::CascadeTrain {
            samples,
            stages,
            trees,
            depth,
            seed,
            out,
            epochs,
        } => {
            if samples == 0
                || stages == 0
                || trees == 0
                || !(1..=ndf::tree::MAX_DEPTH).contains(&depth)
            {
                bail!(usage("samples, stages, trees and depth must be positive"));
            }
            let mut config = CascadeConfig {
                stages,
                trees,
                depth,
                ..CascadeConfig::default()
            };
            config.train.seed = seed;
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            cascade_train(samples, config, &out)
        }
        Command::CascadeEval {
            model,
            samples,
            seed,
            skip,
        } => {
            if samples == 0 {
                bail!(usage("--samples must be positive"));
            }
            cascade_eval(&model, samples, seed, skip)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<NdfError>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
