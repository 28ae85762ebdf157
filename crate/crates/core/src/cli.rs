//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_checkpoint;
use crate::data::scan_dataset;
use crate::error::{Error, Result};
use crate::ndwi::{compute_ndwi, threshold_mask, BandRaster};
use crate::plot::plot_curves;
use crate::trainer::{evaluate, predict, train, TrainConfig, CHECKPOINT_FILE, METRICS_FILE};
use crate::unet::UNetConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Caps kernel parallelism when set.
pub const THREADS_ENV: &str = "TERRASEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "terraseg", version, about = "U-Net binary segmentation of aerial and satellite imagery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes best.ckpt and metrics.csv into --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every pair of a dataset.
    Eval(EvalArgs),
    /// Predict a {0,255} mask for one image.
    Predict(PredictArgs),
    /// Derive a water mask from green and near-infrared bands.
    Ndwi(NdwiArgs),
    /// Draw accuracy, loss and IoU curves from a metrics CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root containing images/ and masks/.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Adam learning rate.
    #[arg(long, value_name = "F", default_value_t = 0.001)]
    pub lr: f64,
    /// Training batch size.
    #[arg(long, value_name = "N", default_value_t = 32)]
    pub batch: usize,
    /// Validation batch size.
    #[arg(long, value_name = "N", default_value_t = 24)]
    pub val_batch: usize,
    /// Maximum number of epochs.
    #[arg(long, value_name = "N", default_value_t = 50)]
    pub epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    #[arg(long, value_name = "N", default_value_t = 9)]
    pub patience: usize,
    /// Fraction of pairs used for training.
    #[arg(long, value_name = "F", default_value_t = 0.8)]
    pub split: f64,
    /// Seed for the split, shuffling and initialization.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Square input size; images are resized to it.
    #[arg(long, value_name = "N", default_value_t = 256)]
    pub img_size: usize,
    /// Number of pooling stages.
    #[arg(long, value_name = "N", default_value_t = 4)]
    pub depth: usize,
    /// Channels of the first encoder stage.
    #[arg(long, value_name = "N", default_value_t = 64)]
    pub width: usize,
    /// Run kernels on a single thread.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset root containing images/ and masks/.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Evaluation batch size.
    #[arg(long, value_name = "N", default_value_t = 24)]
    pub val_batch: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub image: PathBuf,
    /// Output mask, PNG or PGM by extension.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NdwiArgs {
    /// Green band, single channel 8- or 16-bit.
    #[arg(long, value_name = "FILE")]
    pub green: PathBuf,
    /// Near-infrared band, single channel 8- or 16-bit.
    #[arg(long, value_name = "FILE")]
    pub nir: PathBuf,
    /// Output mask, PNG or PGM by extension.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Pixels with index at or above this are water.
    #[arg(long, value_name = "F", default_value_t = 0.0, allow_negative_numbers = true)]
    pub threshold: f32,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_name = "FILE")]
    pub metrics: PathBuf,
    /// Directory receiving accuracy.svg, loss.svg and iou.svg.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            train_batch: self.batch,
            val_batch: self.val_batch,
            max_epochs: self.epochs,
            patience: self.patience,
            split: self.split,
            seed: self.seed,
            model: UNetConfig {
                depth: self.depth,
                base_width: self.width,
                img_size: self.img_size,
                ..UNetConfig::default()
            },
            data_root: self.data.clone(),
            out_dir: self.out.clone(),
        }
    }
}

fn configure_threads(deterministic: bool) {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| match v.parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            log::warn!("ignoring {THREADS_ENV}={v:?}");
            None
        }
    });
    let threads = if deterministic { Some(1) } else { cap };
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            configure_threads(args.deterministic);
            let config = args.to_config();
            let outcome = train(&config)?;
            log::info!(
                "trained {} epochs; best epoch {}; wrote {} and {}",
                outcome.history.len(),
                outcome.best_epoch.map_or("none".into(), |e| e.to_string()),
                config.out_dir.join(CHECKPOINT_FILE).display(),
                config.out_dir.join(METRICS_FILE).display()
            );
        }
        Command::Eval(args) => {
            configure_threads(false);
            if args.val_batch == 0 {
                return Err(Error::Config("batch size must be ≥ 1".into()));
            }
            let (params, config) = load_checkpoint(&args.checkpoint)?;
            let scan = scan_dataset(&args.data)?;
            let m = evaluate(&params, &config, &scan.manifest, args.val_batch)?;
            println!("pairs={} accuracy={} loss={} iou={}", scan.manifest.len(), m.accuracy, m.loss, m.iou);
        }
        Command::Predict(args) => {
            configure_threads(false);
            let (params, config) = load_checkpoint(&args.checkpoint)?;
            predict(&params, &config, &args.image, &args.out)?;
        }
        Command::Ndwi(args) => {
            let green = BandRaster::read(&args.green)?;
            let nir = BandRaster::read(&args.nir)?;
            threshold_mask(&compute_ndwi(&green, &nir)?, args.threshold).write(&args.out)?;
        }
        Command::Plot(args) => {
            plot_curves(&args.metrics, &args.out)?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
