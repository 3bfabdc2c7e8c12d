//! Command-line surface: train, evaluate, recommend, export-intents,
//! and gen-synthetic subcommands over the library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intentcf::checkpoint;
use intentcf::config::RunConfig;
use intentcf::error::{Error, Result};
use intentcf::eval;
use intentcf::graph::{load_dataset, DatasetSplit};
use intentcf::model::ModelParameters;
use intentcf::synth::{write_dataset, SyntheticSpec};
use intentcf::trainer;

#[derive(Parser)]
#[command(
    name = "intentcf",
    version,
    about = "Dual-perspective multi-intent collaborative filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, the epoch log, and the final
    /// test-split metrics into the output directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Print the top-N recommendations for one user.
    Recommend(RecommendArgs),
    /// Export per-dimension intent statistics and prototype matrices.
    ExportIntents(ExportIntentsArgs),
    /// Generate the planted two-block synthetic dataset.
    GenSynthetic(GenSyntheticArgs),
}

/// Configuration file plus per-key overrides shared by all model
/// commands. Every hyperparameter is addressable by flag; `--set`
/// covers any key by its dotted name.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Training interactions file.
    #[arg(long, value_name = "PATH")]
    train: Option<PathBuf>,
    /// Test interactions file.
    #[arg(long, value_name = "PATH")]
    test: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for row-parallel kernels; 1 is the
    /// deterministic reference mode.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_name = "concat_mlp|gmf_mlp|cross_attention")]
    alignment: Option<String>,
    #[arg(long, value_name = "sequential|flat")]
    fusion: Option<String>,
    #[arg(long, value_name = "both|user_only|item_only")]
    perspectives: Option<String>,
    /// Comma-separated ranking cutoffs, e.g. 20,40.
    #[arg(long)]
    cutoffs: Option<String>,
    /// Base embedding width.
    #[arg(long)]
    d: Option<usize>,
    /// Number of intent prototypes per perspective.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "intent-hidden")]
    intent_hidden: Option<usize>,
    /// Intent embedding width.
    #[arg(long = "d-prime")]
    d_prime: Option<usize>,
    #[arg(long = "align-hidden1")]
    align_hidden1: Option<usize>,
    #[arg(long = "align-hidden2")]
    align_hidden2: Option<usize>,
    /// Aligned vector width.
    #[arg(long = "d-star")]
    d_star: Option<usize>,
    #[arg(long = "predict-hidden")]
    predict_hidden: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Negative samples per positive.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "eval-every")]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "max-epochs")]
    max_epochs: Option<usize>,
    #[arg(long = "validation-fraction")]
    validation_fraction: Option<f64>,
    #[arg(long = "validation-cutoff")]
    validation_cutoff: Option<usize>,
    /// Generic override, e.g. --set model.d_prime=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        let mut apply = |key: &str, value: Option<String>| -> Result<()> {
            if let Some(v) = value {
                cfg.apply(key, &v)?;
            }
            Ok(())
        };
        let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        apply("data.train", path_str(&self.train))?;
        apply("data.test", path_str(&self.test))?;
        apply("run.out", path_str(&self.out))?;
        apply("train.seed", self.seed.map(|v| v.to_string()))?;
        apply("run.threads", self.threads.map(|v| v.to_string()))?;
        apply("model.alignment", self.alignment.clone())?;
        apply("model.fusion", self.fusion.clone())?;
        apply("model.perspectives", self.perspectives.clone())?;
        apply("run.cutoffs", self.cutoffs.clone())?;
        apply("model.d", self.d.map(|v| v.to_string()))?;
        apply("model.k", self.k.map(|v| v.to_string()))?;
        apply("model.intent_hidden", self.intent_hidden.map(|v| v.to_string()))?;
        apply("model.d_prime", self.d_prime.map(|v| v.to_string()))?;
        apply("model.align_hidden1", self.align_hidden1.map(|v| v.to_string()))?;
        apply("model.align_hidden2", self.align_hidden2.map(|v| v.to_string()))?;
        apply("model.d_star", self.d_star.map(|v| v.to_string()))?;
        apply("model.predict_hidden", self.predict_hidden.map(|v| v.to_string()))?;
        apply("train.temperature", self.temperature.map(|v| v.to_string()))?;
        apply("train.negatives", self.negatives.map(|v| v.to_string()))?;
        apply("train.learning_rate", self.learning_rate.map(|v| v.to_string()))?;
        apply("train.batch_size", self.batch_size.map(|v| v.to_string()))?;
        apply("train.eval_every", self.eval_every.map(|v| v.to_string()))?;
        apply("train.patience", self.patience.map(|v| v.to_string()))?;
        apply("train.max_epochs", self.max_epochs.map(|v| v.to_string()))?;
        apply(
            "train.validation_fraction",
            self.validation_fraction.map(|v| v.to_string()),
        )?;
        apply(
            "train.validation_cutoff",
            self.validation_cutoff.map(|v| v.to_string()),
        )?;
        for assignment in &self.set {
            let Some((key, value)) = assignment.split_once('=') else {
                return Err(Error::Usage(format!(
                    "--set expects KEY=VALUE, got {assignment:?}"
                )));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        intentcf::tensor::set_threads(cfg.threads);
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// User index to recommend for.
    #[arg(long)]
    user: usize,
    /// Number of recommendations.
    #[arg(long, default_value_t = 10)]
    n: usize,
}

#[derive(Args)]
struct ExportIntentsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Label recorded in the export header, e.g. epoch27 or final.
    #[arg(long, default_value = "final")]
    epoch_tag: String,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Output directory for train.txt and test.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    users: usize,
    #[arg(long, default_value_t = 40)]
    items: usize,
    /// Within-block edge density.
    #[arg(long, default_value_t = 0.8)]
    density: f64,
    /// Fraction of edges held out as test.
    #[arg(long = "test-fraction", default_value_t = 0.1)]
    test_fraction: f64,
}

fn require_dataset(cfg: &RunConfig) -> Result<DatasetSplit> {
    let train = cfg
        .train_path
        .as_ref()
        .ok_or_else(|| Error::Usage("missing --train (or data.train)".into()))?;
    let test = cfg
        .test_path
        .as_ref()
        .ok_or_else(|| Error::Usage("missing --test (or data.test)".into()))?;
    load_dataset(train, test)
}

fn require_out(cfg: &RunConfig) -> Result<&Path> {
    cfg.out_dir
        .as_deref()
        .ok_or_else(|| Error::Usage("missing --out (or run.out)".into()))
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = require_out(cfg)?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
    // Provenance: the exact resolved configuration.
    let config_path = out.join("config.txt");
    std::fs::write(&config_path, cfg.to_text())
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dataset = require_dataset(&cfg)?;
    let out = prepare_out(&cfg)?;

    let outcome = trainer::train(&dataset, cfg.model.clone(), &cfg.train)?;

    let mut log = String::new();
    for record in &outcome.history {
        let line = record.to_log_line(cfg.train.validation_cutoff);
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    }
    write_text(&out.join("train_log.txt"), &log)?;
    checkpoint::save(&outcome.best, &out.join("checkpoint_best.ckpt"))?;
    checkpoint::save(&outcome.last, &out.join("checkpoint_final.ckpt"))?;
    if let Some(epoch) = outcome.best_epoch {
        println!("best checkpoint from epoch {epoch}");
    }

    if dataset.test.iter().any(|t| !t.is_empty()) {
        let report = eval::evaluate(&outcome.best, &dataset.train, &dataset.test, &cfg.cutoffs)?;
        write_text(&out.join("metrics.txt"), &report.to_text())?;
        print!("{}", report.to_text());
    } else {
        println!("test split is empty; skipping final evaluation");
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dataset = require_dataset(&cfg)?;
    let params = load_compatible_checkpoint(&args.checkpoint, &cfg, &dataset)?;
    let report = eval::evaluate(&params, &dataset.train, &dataset.test, &cfg.cutoffs)?;
    if cfg.out_dir.is_some() {
        let out = prepare_out(&cfg)?;
        write_text(&out.join("metrics.txt"), &report.to_text())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_recommend(args: &RecommendArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dataset = require_dataset(&cfg)?;
    if args.user >= dataset.num_users() {
        return Err(Error::Usage(format!(
            "user {} out of range: dataset has {} users",
            args.user,
            dataset.num_users()
        )));
    }
    let params = load_compatible_checkpoint(&args.checkpoint, &cfg, &dataset)?;
    let tables = intentcf::model::EntityTables::new(&params, &dataset.train)?;
    let ranked = eval::rank_items(
        &params,
        &tables,
        args.user,
        dataset.train.items_of(args.user),
    )?;
    for (item, score) in ranked.items.iter().zip(&ranked.scores).take(args.n) {
        println!("{item} {score}");
    }
    Ok(())
}

fn cmd_export_intents(args: &ExportIntentsArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dataset = require_dataset(&cfg)?;
    let params = load_compatible_checkpoint(&args.checkpoint, &cfg, &dataset)?;
    let out = prepare_out(&cfg)?;
    let path = out.join(format!("intent_stats_{}.txt", args.epoch_tag));
    eval::export_intent_stats(&params, &dataset.train, &args.epoch_tag, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_compatible_checkpoint(
    path: &Path,
    cfg: &RunConfig,
    dataset: &DatasetSplit,
) -> Result<ModelParameters> {
    let params = checkpoint::load(path, &cfg.model)?;
    if params.num_users != dataset.num_users() || params.num_items != dataset.num_items() {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained on {} users x {} items, dataset has {} x {}",
            params.num_users,
            params.num_items,
            dataset.num_users(),
            dataset.num_items()
        )));
    }
    Ok(params)
}

fn cmd_gen_synthetic(args: &GenSyntheticArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_users: args.users,
        num_items: args.items,
        density: args.density,
        test_fraction: args.test_fraction,
        seed: args.seed,
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let train = args.out.join("train.txt");
    let test = args.out.join("test.txt");
    write_dataset(&spec, &train, &test)?;
    println!("wrote {} and {}", train.display(), test.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Recommend(args) => cmd_recommend(args),
        Command::ExportIntents(args) => cmd_export_intents(args),
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
