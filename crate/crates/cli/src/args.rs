use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use genrenet_core::data_io::DEFAULT_SPLIT_SEED;
use genrenet_core::losses::{
    ContrastiveConvention, DEFAULT_CONTRASTIVE_MARGIN, DEFAULT_TRIPLET_MARGIN, DISTANCE_EPSILON,
};
use genrenet_core::network::{Activation, DEFAULT_PROJECTION_DIM};
use genrenet_core::trainer::OptimizerKind;

pub const SEED_ENV: &str = "GENRENET_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "genrenet",
    version,
    about = "Genre classifiers over precomputed audio embeddings"
)]
pub struct Cli {
    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier on a manifest's dataset.
    Train(TrainArgs),
    /// Score a saved model on a manifest's dataset.
    Eval(EvalArgs),
    /// Train one model per point of a parameter grid.
    Sweep(SweepArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Combine two datasets into one label space.
    MergeLabels(MergeArgs),
    /// Write a synthetic Gaussian-cluster dataset.
    Synth(SynthArgs),
    /// Print the headers of EMB1 embedding files.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset manifest (key=value file).
    #[arg(long)]
    pub manifest: PathBuf,

    /// Train/validation/test fractions, used when the manifest has no splits.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,

    /// Seed of the stratified split.
    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Hidden layer widths, comma-separated (1 to 4 layers).
    #[arg(long, value_delimiter = ',', default_values_t = [256, 128, 64])]
    pub hidden: Vec<usize>,

    #[arg(long, default_value_t = Activation::Relu)]
    pub activation: Activation,

    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,

    /// Disable batch normalization after each hidden linear layer.
    #[arg(long)]
    pub no_batch_norm: bool,

    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,

    #[arg(long, default_value_t = 64)]
    pub batch: usize,

    #[arg(long, default_value_t = 50)]
    pub epochs: usize,

    #[arg(long, default_value_t = OptimizerKind::Adam)]
    pub optimizer: OptimizerKind,

    /// Seed for initialization, shuffling, dropout, mining and noise.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    /// Multitask loss weights, e.g. `ce:0.35,ce:0.35,contrastive:0.3`.
    /// Without it a single cross-entropy head is trained.
    #[arg(long)]
    pub weights: Option<String>,

    #[arg(long, default_value_t = DEFAULT_CONTRASTIVE_MARGIN)]
    pub contrastive_margin: f64,

    /// Use the contrastive form with the similar and dissimilar terms swapped.
    #[arg(long)]
    pub contrastive_swapped: bool,

    #[arg(long, default_value_t = DEFAULT_TRIPLET_MARGIN)]
    pub triplet_margin: f64,

    /// Let triplet rows go negative instead of hinging at zero.
    #[arg(long)]
    pub triplet_no_hinge: bool,

    /// Added under the square root of embedding distances.
    #[arg(long, default_value_t = DISTANCE_EPSILON)]
    pub distance_epsilon: f64,

    #[arg(long, default_value_t = DEFAULT_PROJECTION_DIM)]
    pub projection_dim: usize,

    /// Gaussian input noise at this SNR in dB; off when absent.
    #[arg(long)]
    pub snr: Option<f64>,

    /// Start of the noise window as a fraction of the epochs.
    #[arg(long, default_value_t = 0.0)]
    pub noise_start: f64,

    /// Length of the noise window as a fraction of the epochs.
    #[arg(long, default_value_t = 0.3)]
    pub noise_fraction: f64,

    /// Measure validation accuracy every this many epochs.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

impl ModelArgs {
    pub fn convention(&self) -> ContrastiveConvention {
        if self.contrastive_swapped {
            ContrastiveConvention::Swapped
        } else {
            ContrastiveConvention::Standard
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Directory for model.emtn, report.json, report.txt and train.log.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Which part to score: train, val, test or all.
    #[arg(long, default_value = "test")]
    pub part: String,

    /// text or json.
    #[arg(long, default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Grid axis as `name=v1,v2,...`. Names: depth, width, dropout,
    /// activation, batch_norm, snr_db, noise_window (values `start+length`),
    /// weights (configurations separated by `;`, or `grid`). Repeatable.
    #[arg(long = "axis")]
    pub axes: Vec<String>,

    /// Shorthand for `--axis weights=grid`.
    #[arg(long)]
    pub weight_grid: bool,

    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Refuse grids larger than this.
    #[arg(long, default_value_t = genrenet_core::report::DEFAULT_MAX_POINTS)]
    pub max_points: usize,

    /// text or csv.
    #[arg(long, default_value = "text")]
    pub format: String,

    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also write `series,x,y` plot data against this axis.
    #[arg(long, requires = "plot_out")]
    pub plot: Option<String>,

    #[arg(long)]
    pub plot_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Largest accepted relative error per parameter block.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,

    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    /// Print every case, not only failures.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub a: PathBuf,

    #[arg(long)]
    pub b: PathBuf,

    /// Output manifest; data files are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output manifest; data files are written next to it.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 10)]
    pub classes: usize,

    #[arg(long, default_value_t = 200)]
    pub per_class: usize,

    #[arg(long, default_value_t = 64)]
    pub dim: usize,

    /// Closest centre distance in units of sigma.
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,

    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    /// Dataset name recorded in the manifest and labels.
    #[arg(long, default_value = "synth")]
    pub name: String,

    /// Also write a stratified split with these fractions.
    #[arg(long)]
    pub split: Option<String>,

    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// EMB1 files or manifests.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}
