//! `vprd`: command-line front end for preprocessing, synthetic data,
//! training, evaluation, prediction, reconstruction and benchmarking.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vprd", version, about = "Virtual lasing-off prediction and photon pulse reconstruction")]
#[command(after_help = "\
Configuration precedence, highest first: command-line flags, the --config TOML file, \
the VPRD_SEED environment variable (seed only), built-in defaults.\n\
Every command that writes artifacts also writes the resolved config and one run manifest.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with known ground truth, optionally with
    /// jittered phase-space images.
    Synth(SynthArgs),
    /// Project phase-space images to power profiles, de-jitter and crop them
    /// into a dataset.
    Preprocess(PreprocessArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Compare model errors against the mean and neighbor baselines on the
    /// test split.
    Evaluate(EvaluateArgs),
    /// Predict lasing-off profiles from a CSV of machine parameters.
    Predict(PredictArgs),
    /// Subtract predicted lasing-off profiles from lasing-on measurements.
    Reconstruct(ReconstructArgs),
    /// Time single-shot inference and print the latency report as JSON.
    Bench(BenchArgs),
    /// Run the whole synthetic pipeline: generate, image, preprocess, train
    /// and evaluate.
    Run(RunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML config file; unknown keys are rejected.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for generation, splitting, initialization and dropout [default: 42].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Also write jittered phase-space images to this directory.
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Number of shots [default: 2826].
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Profile length in time bins [default: 700].
    #[arg(long)]
    pub d_out: Option<usize>,
    /// Parameter-to-profile mapping [default: bump].
    #[arg(long)]
    pub mapping: Option<MappingArg>,
    /// Standard deviation of the per-shot arrival jitter in pixels [default: 15].
    #[arg(long)]
    pub jitter_std: Option<f64>,
    /// Standard deviation of additive label noise [default: 0.02].
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MappingArg {
    Linear,
    Bump,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    /// Phase-image directory.
    #[arg(long, value_name = "DIR")]
    pub images: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Gaussian smoothing sigma in pixels used for peak finding [default: 10].
    #[arg(long)]
    pub smooth_radius: Option<usize>,
    /// Bins kept on each side of the detected signal [default: 10].
    #[arg(long)]
    pub padding: Option<usize>,
    /// Histogram bins for the Otsu threshold [default: 256].
    #[arg(long)]
    pub otsu_bins: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Hidden layer width [default: 294].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Dropout probability during training [default: 0.45].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Initial Adam learning rate [default: 0.005].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training loss [default: mse].
    #[arg(long)]
    pub loss: Option<LossArg>,
    /// Anti-mean penalty factor; values above 0.05 are accepted with a warning [default: 0].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Learning-rate reduction factor on plateau [default: 0.05].
    #[arg(long)]
    pub scheduler_factor: Option<f64>,
    /// Validations without improvement before the learning rate drops [default: 238].
    #[arg(long)]
    pub scheduler_patience: Option<usize>,
    /// Validations without improvement before training stops [default: 1225].
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Hard cap on training steps [default: 50000].
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum LossArg {
    Mse,
    AntiMean,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Dataset directory the model was trained on.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output report JSON; per-shot errors go to `<stem>.errors.csv`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Evaluate every shot instead of the checkpoint's test split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// CSV of raw machine parameters, one shot per row.
    #[arg(long, value_name = "FILE")]
    pub params: PathBuf,
    /// Output matrix of predicted profiles, one row per shot.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Dataset directory of lasing-on shots.
    #[arg(long, value_name = "DIR")]
    pub lasing_on: PathBuf,
    /// Output matrix of photon power, one row per shot; provenance goes to `<stem>.json`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Timed runs; at least 1000 [default: 10000].
    #[arg(long, default_value_t = 10_000)]
    pub runs: usize,
    /// Untimed warmup runs; at least 100 [default: 1000].
    #[arg(long, default_value_t = 1_000)]
    pub warmup: usize,
    /// Also write the report to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
