//! `lanesnn` command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lanesnn_core::Architecture;

pub mod commands;
pub mod config;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "lanesnn",
    version,
    about = "Spiking lane segmentation: data, training, evaluation and fixed-point inference",
    args_override_self = true,
    after_help = "Every subcommand accepts --config FILE with `key = value` lines; flags on the command line win."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic lane dataset as PGM pairs plus manifests.
    GenData(GenDataArgs),
    /// Crop, resize and augment raw frames into network-sized samples.
    Preprocess(PreprocessArgs),
    /// Train a network and write its best checkpoint and a metrics CSV.
    Train(TrainArgs),
    /// Score a checkpoint on a processed split.
    Eval(EvalArgs),
    /// Convert a checkpoint to fixed-point parameters.
    Quantize(QuantizeArgs),
    /// Score a fixed-point network with the integer simulator.
    InferQuant(InferQuantArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n_train: usize,
    #[arg(long)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output root; `train/` and `test/` are created inside.
    #[arg(long)]
    pub out: PathBuf,
    /// Frame width in pixels.
    #[arg(long, default_value_t = 1280)]
    pub width: usize,
    /// Frame height in pixels.
    #[arg(long, default_value_t = 800)]
    pub height: usize,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct PreprocessArgs {
    /// Raw dataset root holding `train/` and `test/` (manifest or input/ + label/ folders).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Augmented copies added to the training split (reference setting: 271).
    #[arg(long, default_value_t = 271)]
    pub augment: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rows cut from the top of each raw frame (reference setting: 300).
    #[arg(long, default_value_t = 300)]
    pub crop_top: usize,
    /// Rows cut from the bottom (reference setting: 200).
    #[arg(long, default_value_t = 200)]
    pub crop_bottom: usize,
    /// Lane value before label down-scaling (reference setting: 400).
    #[arg(long, default_value_t = 400.0)]
    pub denorm: f64,
    /// Augmentation vertical shift range, pixels (reference setting: 100).
    #[arg(long, default_value_t = 100)]
    pub max_translate: i64,
    /// Augmentation rotation range, degrees (reference setting: 30).
    #[arg(long, default_value_t = 30.0)]
    pub max_rotate: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Processed dataset root holding `train/` and `test/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Network topology: cnn, fully-c600, fully-c800, fully-c800600.
    #[arg(long, default_value = "fully-c600")]
    pub arch: Architecture,
    /// Weighted cross-entropy share of the loss (reference sweep: 0.0 to 0.5).
    #[arg(long, default_value_t = 0.3)]
    pub p: f64,
    /// Positive-class weight (reference setting: 4.0).
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Learning rate (reference setting: 1e-4).
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Decoupled weight decay per step (reference sweep: 0 to 5e-4).
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    /// Firing threshold (reference setting: 0.2).
    #[arg(long, default_value_t = 0.2)]
    pub vth: f64,
    /// Membrane retain factor per step (reference setting: 0.2).
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    /// Surrogate pulse half-width; defaults to the threshold.
    #[arg(long)]
    pub a1_half: Option<f64>,
    /// Training epochs (reference setting: 200).
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Mini-batch size (reference setting: 4).
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Simulation steps per sample (reference setting: 30).
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    /// Input noise std before every weighted layer (reference setting: 0.1).
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Dropout before the CNN's dense layer (reference setting: 0.1).
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Backpropagate through the spike reset gate.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub reset_term: bool,
    /// Update biases (reference setting: biases fixed at 0).
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub train_bias: bool,
    /// Evaluate on the test split every N epochs (0 disables).
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Best-IoU checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV path; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Also save the final-epoch network here.
    #[arg(long)]
    pub last: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Processed split directory (e.g. `data/test`).
    #[arg(long)]
    pub data: PathBuf,
    /// Simulation steps per sample (reference setting: 30).
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-image CSV `image_id,best_th,iou_at_mean_th`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Pooled precision/recall CSV.
    #[arg(long)]
    pub pr: Option<PathBuf>,
    /// Write rate masks (`<id>.pgm`) and thresholded masks (`<id>.bin.pgm`) here.
    #[arg(long)]
    pub emit_masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-layer scale, saturation and rounding-error CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct InferQuantArgs {
    #[arg(long)]
    pub qnt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Simulation steps per sample (reference setting: 30).
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    /// Idle steps between samples (reference setting: 10).
    #[arg(long, default_value_t = 10)]
    pub blank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Float checkpoint to compare against.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub pr: Option<PathBuf>,
}

/// Map an error chain to the documented exit code.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    use lanesnn_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFinite(_) => EXIT_NUMERIC,
                Error::InvalidArgument(_) => EXIT_USAGE,
                Error::Parse { .. } | Error::Io { .. } | Error::EmptyManifest(_) | Error::State(_) => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match config::expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
