use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use altmas::datapool::io::{load_csv_pool, load_idx, load_predictions};
use altmas::datapool::TestPool;
use altmas::harness::{
    emit_svg, generate_blobs, read_csv, run_experiment, write_blob_files, write_csv, BlobSpec,
    ExperimentConfig, StrategyKind,
};
use altmas::{Error, Result};

#[derive(Parser)]
#[command(
    name = "altmas",
    version,
    about = "Label-efficient active testing of black-box classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV log plus a single-series figure.
    Run(RunArgs),
    /// Combine CSV logs into one label-efficiency figure.
    Report(ReportArgs),
    /// Generate a synthetic pool with a simulated model under test.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pool CSV with `label,pred,f0,f1,...` columns.
    #[arg(long)]
    pool_csv: Option<PathBuf>,
    /// IDX image and label files (in that order).
    #[arg(long, num_args = 2, value_names = ["IMAGES", "LABELS"])]
    pool_idx: Option<Vec<PathBuf>>,
    /// Model-under-test predictions, one integer per line (IDX pools).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Comma-separated metric names (accuracy, precision:K, recall:K,
    /// macro_precision, macro_recall, full21).
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// random, bald, altmas or tradition.
    #[arg(long)]
    strategy: Option<String>,
    /// Oracle queries after the free seed set.
    #[arg(long)]
    budget: Option<usize>,
    /// Free seed-set size.
    #[arg(long)]
    seed_size: Option<usize>,
    /// Stochastic forward passes per posterior.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Points queried per iteration.
    #[arg(long)]
    acquisition_batch: Option<usize>,
    /// Disable training-set augmentation.
    #[arg(long)]
    no_augmentation: bool,
    /// Log zeros in the wall-time column so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Standardize features to zero mean and unit variance.
    #[arg(long)]
    standardize: bool,
    /// Output directory for `<strategy>.csv` and `<strategy>.svg`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// CSV logs, one series each; each file stem names its series.
    #[arg(long, required = true, num_args = 1..)]
    logs: Vec<PathBuf>,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for `pool.csv` and `predictions.txt`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Accuracy the simulated model under test hits exactly.
    #[arg(long = "mut-accuracy", default_value_t = 0.7)]
    mut_accuracy: f64,
    /// Distance scale between class centers.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
        Command::Synth(args) => synth(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = args.pool_csv {
        config.pool_csv = Some(path);
        config.pool_idx = None;
    }
    if let Some(paths) = args.pool_idx {
        config.pool_idx = Some((paths[0].clone(), paths[1].clone()));
        config.pool_csv = None;
    }
    if let Some(path) = args.predictions {
        config.predictions = Some(path);
    }
    if let Some(metrics) = args.metrics {
        config.metrics = metrics;
    }
    if let Some(name) = args.strategy {
        config.strategy = StrategyKind::parse(&name)?;
    }
    if let Some(v) = args.budget {
        config.budget = v;
    }
    if let Some(v) = args.seed_size {
        config.seed_size = v;
    }
    if let Some(v) = args.mc_samples {
        config.mc_samples = v;
    }
    if let Some(v) = args.repetitions {
        config.repetitions = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.acquisition_batch {
        config.acquisition_batch = v;
    }
    if args.no_augmentation {
        config.augmentation = false;
    }
    if args.no_timing {
        config.record_timing = false;
    }
    if args.standardize {
        config.standardize_features = true;
    }
    if let Some(dir) = args.out {
        config.out_dir = Some(dir);
    }

    let mut pool = load_pool(&config)?;
    if config.standardize_features {
        pool.standardize_features();
    }

    let log = run_experiment(&config, &pool)?;

    let out_dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", log.strategy));
    let svg_path = out_dir.join(format!("{}.svg", log.strategy));
    write_csv(&log, &csv_path)?;
    emit_svg(&[&log], &svg_path)?;

    println!("wrote {}", csv_path.display());
    println!("wrote {}", svg_path.display());
    if let Some(err) = log.final_mean_relative_error() {
        println!("final mean relative error: {err:.6}");
    }
    Ok(())
}

fn load_pool(config: &ExperimentConfig) -> Result<TestPool> {
    match (&config.pool_csv, &config.pool_idx) {
        (Some(csv), None) => {
            if config.predictions.is_some() {
                return Err(Error::Config(
                    "a predictions file only applies to IDX pools; the CSV already \
                     carries a pred column"
                        .into(),
                ));
            }
            load_csv_pool(csv)
        }
        (None, Some((images, labels))) => {
            let predictions_path = config
                .predictions
                .as_ref()
                .ok_or_else(|| Error::Config("IDX pools need a predictions file".into()))?;
            let (features, truth) = load_idx(images, labels)?;
            // IDX labels are bytes, so 256 bounds them; the real class count
            // comes from what truth and predictions actually use.
            let predictions = load_predictions(predictions_path, truth.len(), 256)?;
            let top = truth
                .iter()
                .chain(predictions.iter())
                .copied()
                .max()
                .unwrap_or(0);
            TestPool::new(features, predictions, truth, top + 1)
        }
        (Some(_), Some(_)) => Err(Error::Config(
            "give either a CSV pool or an IDX pool, not both".into(),
        )),
        (None, None) => Err(Error::Config(
            "no pool given; set pool_csv or pool_idx_images/pool_idx_labels".into(),
        )),
    }
}

fn report(args: ReportArgs) -> Result<()> {
    let logs = args
        .logs
        .iter()
        .map(|path| {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "series".into());
            read_csv(path, stem)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&_> = logs.iter().collect();
    emit_svg(&refs, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = BlobSpec {
        n: args.n,
        classes: args.classes,
        dim: args.dim,
        mut_accuracy: args.mut_accuracy,
        separation: args.separation,
        seed: args.seed,
    };
    let pool = generate_blobs(&spec)?;
    let (pool_path, pred_path) = write_blob_files(&pool, &args.out)?;
    println!("wrote {}", pool_path.display());
    println!("wrote {}", pred_path.display());
    Ok(())
}
