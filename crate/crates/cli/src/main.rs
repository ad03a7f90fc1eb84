//! `contrailseg`: generate synthetic corpora, train, evaluate and report.

mod commands;
mod config;
mod error;
mod masks;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::{keys_help, Overrides, RunConfig};
use crate::error::CliError;

const THREADS_ENV: &str = "CONTRAILSEG_THREADS";

#[derive(Parser)]
#[command(name = "contrailseg", version, about = "Contrail segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// JSON run config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds both corpus generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    use_mc: Option<bool>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    use_soft_labels: Option<bool>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    use_pseudo_labels: Option<bool>,
    /// Sets scene, network and training image size together; contrail lengths scale with it.
    #[arg(long, global = true)]
    image_size: Option<usize>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Args, Clone, Debug)]
struct DataArg {
    /// Dataset directory written by `synth`; generated from the config when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus to --out.
    Synth {
        /// Number of samples (default: split.labeled + split.unlabeled + split.holdout).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one model on the labeled split and score the holdout.
    Train(DataArg),
    /// k-fold cross-validation on the labeled split.
    Crossval(DataArg),
    /// Predict soft pseudo-labels for the unlabeled split.
    Pseudolabel {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArg,
    },
    /// Cross-validate, pseudo-label with the best fold, retrain on the union.
    TwoPhase(DataArg),
    /// Score every prediction mask against its truth mask (pooled Dice).
    Eval {
        /// Directory of `<id>.ten` masks, or a dataset directory.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of `<id>.ten` masks, or a dataset directory.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Run the four incremental configurations and print a Dice table.
    Ablate(DataArg),
    /// Finite-difference checks of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Coordinates sampled per seed for the whole-network check.
        #[arg(long, default_value_t = 1000)]
        coordinates: usize,
    },
    /// JSON metrics and PNG overlays for a trained model on the holdout split.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArg,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config {
        field: THREADS_ENV.into(),
        reason: format!("{raw:?} is not a positive integer"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
        use_mc: common.use_mc,
        use_soft_labels: common.use_soft_labels,
        use_pseudo_labels: common.use_pseudo_labels,
        image_size: common.image_size,
        folds: common.folds,
        epochs: common.epochs,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command, common: &Common) -> Result<(), CliError> {
    init_threads()?;
    let ctx = Ctx { cfg: resolve(common)? };
    match command {
        Command::Synth { count } => commands::synth(&ctx, count),
        Command::Train(d) => commands::train(&ctx, d.data.as_deref()),
        Command::Crossval(d) => commands::crossval(&ctx, d.data.as_deref()),
        Command::Pseudolabel { model, data } => commands::pseudolabel(&ctx, &model, data.data.as_deref()),
        Command::TwoPhase(d) => commands::two_phase(&ctx, d.data.as_deref()),
        Command::Eval { pred, truth } => commands::eval(&ctx, &pred, &truth),
        Command::Ablate(d) => commands::ablate(&ctx, d.data.as_deref()),
        Command::Gradcheck { seeds, coordinates } => commands::gradcheck(&ctx, seeds, coordinates),
        Command::Report { model, data } => commands::report(&ctx, &model, data.data.as_deref()),
    }
}

fn main() -> ExitCode {
    let keys = keys_help();
    let cmd = Common::augment_args(Cli::command()).mut_subcommands(|s| s.after_help(keys.clone()));
    let matches = cmd.get_matches();
    let common = Common::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    match run(cli.command, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
