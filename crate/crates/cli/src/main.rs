use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(divnoise_core::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("run directory {0} is locked by another process (remove the lock file if stale)")]
    Locked(PathBuf),
}

impl From<divnoise_core::Error> for CliError {
    fn from(e: divnoise_core::Error) -> Self {
        match e.root() {
            divnoise_core::Error::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "divnoise", version, about = "Diverse unsupervised denoising with VAEs and pixel noise models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.beta=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Dataset path (`data.path`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit or write the pixel noise model.
    FitNoise {
        /// Destination of the noise-model container.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes best/last checkpoints and a report.
    Train,
    /// Draw posterior samples and write MMSE (and MAP) estimates.
    Denoise {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Noisy input stack; defaults to the configured data.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, alias = "K")]
        k: Option<usize>,
        #[arg(long)]
        map: bool,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        margin: Option<usize>,
    },
    /// Score predictions or a model against ground truth.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Prediction stack to score instead of running the model.
        #[arg(long)]
        prediction: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Sample images from the prior.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, alias = "K")]
        k: Option<usize>,
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        shape: Option<Vec<usize>>,
    },
    /// Segment denoised samples, fusing them by consensus.
    Segment {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// `avg` or `none`.
        #[arg(long)]
        consensus: Option<String>,
        #[arg(long, alias = "K")]
        k: Option<usize>,
        #[arg(long)]
        gt_labels: Option<PathBuf>,
        /// Segment the inputs directly, without a model.
        #[arg(long)]
        no_model: bool,
    },
    /// Train one model per KL weight and tabulate MMSE PSNR and diversity.
    BetaSweep {
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Corrupt clean data at several noise levels and compare diversity.
    DiversityStudy {
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
}

fn push<T: std::fmt::Display>(sets: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        sets.push(format!("{key}={v}"));
    }
}

fn quoted(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| format!("{:?}", p.to_string_lossy()))
}

fn list<T: std::fmt::Display>(v: &Option<Vec<T>>) -> Option<String> {
    v.as_ref().map(|v| format!("[{}]", v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")))
}

/// Translates flags into config overrides so they share one code path.
fn flag_overrides(cli: &Cli) -> Vec<String> {
    let mut sets = cli.common.sets.clone();
    push(&mut sets, "seed", cli.common.seed);
    push(&mut sets, "output_dir", quoted(&cli.common.output_dir));
    push(&mut sets, "data.path", quoted(&cli.common.data));
    match &cli.command {
        Command::Denoise { k, map, tile, margin, .. } => {
            push(&mut sets, "inference.k", *k);
            push(&mut sets, "inference.tile", *tile);
            push(&mut sets, "inference.margin", *margin);
            if *map {
                sets.push("inference.map=true".into());
            }
        }
        Command::Evaluate { prediction, ground_truth, .. } => {
            push(&mut sets, "eval.prediction", quoted(prediction));
            push(&mut sets, "data.ground_truth", quoted(ground_truth));
        }
        Command::Generate { k, shape, .. } => {
            push(&mut sets, "generate.k", *k);
            push(&mut sets, "generate.shape", list(shape));
        }
        Command::Segment { consensus, k, gt_labels, .. } => {
            push(&mut sets, "seg.consensus", consensus.as_ref().map(|c| format!("{c:?}")));
            push(&mut sets, "seg.k", *k);
            push(&mut sets, "seg.ground_truth_labels", quoted(gt_labels));
        }
        Command::BetaSweep { betas } => push(&mut sets, "study.betas", list(betas)),
        Command::DiversityStudy { sigmas } => push(&mut sets, "study.sigmas", list(sigmas)),
        Command::FitNoise { .. } | Command::Train => {}
    }
    sets
}

fn run(cli: Cli) -> Result<(), CliError> {
    let sets = flag_overrides(&cli);
    let cfg = RunConfig::load(cli.common.config.as_deref(), std::env::vars(), &sets)?;
    cfg.validate()?;
    let _lock = commands::RunLock::acquire(&cfg.output_dir)?;
    match cli.command {
        Command::FitNoise { out } => commands::fit_noise(&cfg, out),
        Command::Train => commands::train(&cfg),
        Command::Denoise { checkpoint, input, .. } => commands::denoise(&cfg, checkpoint, input),
        Command::Evaluate { checkpoint, input, .. } => commands::evaluate(&cfg, checkpoint, input),
        Command::Generate { checkpoint, .. } => commands::generate(&cfg, checkpoint),
        Command::Segment { checkpoint, input, no_model, .. } => commands::segment(&cfg, checkpoint, input, no_model),
        Command::BetaSweep { .. } => commands::beta_sweep(&cfg),
        Command::DiversityStudy { .. } => commands::diversity_study(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIVNOISE_LOG", level)).format_timestamp_secs().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
