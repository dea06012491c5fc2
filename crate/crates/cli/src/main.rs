//! `crabwatch`: tiling, super-resolution, detection, evaluation and
//! density mapping for UAV crab surveys.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crabwatch::survey::SurveyConfig;
use crabwatch::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "crabwatch", version, about = "UAV crab survey pipeline")]
pub struct Cli {
    /// TOML configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "crabwatch-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

/// Where a command gets labelled images.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Folder of PNGs with optional same-stem YOLO label files.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic scenes instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a survey frame into overlapping tiles.
    Tile {
        #[arg(long)]
        frame: PathBuf,
        /// Labels normalized to the whole frame.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Produce LR images by bicubic downsampling.
    Degrade {
        #[command(flatten)]
        data: DataArgs,
        /// Downsampling factor; defaults to the configured magnification.
        #[arg(short, long)]
        m: Option<usize>,
    },
    /// Expand a dataset with the configured augmentation recipe.
    Augment {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train one super-resolution model on HR images.
    TrainSr {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        arch: String,
        #[arg(short, long)]
        m: Option<usize>,
    },
    /// Score bicubic and SR checkpoints by PSNR/SSIM (and detection, with --detector).
    EvalSr {
        #[command(flatten)]
        data: DataArgs,
        /// SR checkpoints, one per method.
        #[arg(long = "sr", num_args = 0..)]
        sr: Vec<PathBuf>,
        #[arg(short, long)]
        m: Option<usize>,
        #[arg(long)]
        detector: Option<PathBuf>,
    },
    /// Train a detector variant.
    TrainDet {
        #[command(flatten)]
        data: DataArgs,
        /// baseline, four-heads, four-heads-gsconv or crab-yolo.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a detector checkpoint.
    EvalDet {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        detector: PathBuf,
    },
    /// Train and score all four detector variants.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Held-out test folder; the training set is reused when omitted.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Detect on the LR test set and its reconstruction at each magnification.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        detector: PathBuf,
        /// One SR checkpoint per configured sweep factor.
        #[arg(long = "sr", num_args = 1..)]
        sr: Vec<PathBuf>,
        /// Factor turning the HR data into the LR test set.
        #[arg(long)]
        lr_factor: Option<usize>,
    },
    /// Merge per-tile predictions into frame detections.
    Merge {
        /// Tile manifest written by `tile`.
        #[arg(long)]
        tiles: PathBuf,
        /// Folder of `<tile>.txt` prediction files.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Grid frame detections into a density map and heatmap.
    Density {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
    },
    /// Run the whole pipeline on one frame (synthetic when omitted).
    Report {
        #[arg(long)]
        frame: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

impl Cli {
    fn name(&self) -> &'static str {
        match self.command {
            Command::Tile { .. } => "tile",
            Command::Degrade { .. } => "degrade",
            Command::Augment { .. } => "augment",
            Command::TrainSr { .. } => "train-sr",
            Command::EvalSr { .. } => "eval-sr",
            Command::TrainDet { .. } => "train-det",
            Command::EvalDet { .. } => "eval-det",
            Command::Ablate { .. } => "ablate",
            Command::Sweep { .. } => "sweep",
            Command::Merge { .. } => "merge",
            Command::Density { .. } => "density",
            Command::Report { .. } => "report",
        }
    }

    fn survey_config(&self) -> Result<SurveyConfig> {
        let mut cfg = match &self.config {
            Some(path) => SurveyConfig::load(path)?,
            None => SurveyConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 2 config error, 3 missing input, 4 training divergence, 1 anything else.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::FingerprintMismatch { .. } => 2,
        Error::MissingFile(_) => 3,
        Error::TrainingDiverged { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.survey_config().and_then(|cfg| commands::run(&cli, cli.name(), &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crabwatch {}: {e}", cli.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
