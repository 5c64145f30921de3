use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use densemem::classifier::Framing;
use densemem::analysis::GapChannel;
use densemem::EnergyKind;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "densemem", version, about = "Dense associative memory experiments")]
pub struct Cli {
    /// Global seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Root directory for run artifacts.
    #[arg(long, global = true, env = "DAM_OUTDIR", default_value = "runs")]
    pub outdir: PathBuf,

    /// Subdirectory of `outdir` for this run (default: command and seed).
    #[arg(long, global = true)]
    pub run_id: Option<String>,

    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat `key = value` file supplying defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Solve the XOR truth table with a 4-memory network.
    Xor(XorArgs),
    /// Capacity formulas and recall experiments.
    #[command(subcommand)]
    Capacity(CapacityCommand),
    /// Train the classifier on MNIST.
    Train(Box<TrainArgs>),
    /// Error rate of a checkpoint on a labelled image set.
    Eval(EvalArgs),
    /// Vote and dominant-contribution histograms plus memory images.
    Analyze(AnalyzeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Xor(_) => "xor",
            Command::Capacity(CapacityCommand::Theory(_)) => "capacity-theory",
            Command::Capacity(CapacityCommand::Hist(_)) => "capacity-hist",
            Command::Capacity(CapacityCommand::Khalf(_)) => "capacity-khalf",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct XorArgs {
    #[arg(long = "n")]
    pub power: u32,
    #[arg(long, default_value = "poly")]
    pub kind: EnergyKind,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum CapacityCommand {
    /// Closed-form capacities and error probabilities.
    Theory(TheoryArgs),
    /// Final-overlap histograms from random starts.
    Hist(HistArgs),
    /// Number of memories at which half the starts are recovered.
    Khalf(KhalfArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TheoryArgs {
    #[arg(long = "N", value_delimiter = ',', default_value = "100")]
    pub neurons: Vec<usize>,
    #[arg(long = "n", value_delimiter = ',', default_value = "2,3,4")]
    pub powers: Vec<u32>,
    /// Per-bit error threshold for `k_max_at_error`.
    #[arg(long, default_value_t = 0.005)]
    pub threshold: f64,
    /// Also tabulate the error probability at these memory counts.
    #[arg(long = "K", value_delimiter = ',')]
    pub memories: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct HistArgs {
    #[arg(long = "N", default_value_t = 100)]
    pub neurons: usize,
    #[arg(long = "K", default_value_t = 2000)]
    pub memories: usize,
    #[arg(long = "n", value_delimiter = ',', default_value = "2,3,4,5")]
    pub powers: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "poly,rect")]
    pub kind: Vec<EnergyKind>,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    /// Use 10000 trials per cell.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct KhalfArgs {
    #[arg(long = "N", value_delimiter = ',', default_value = "50,100,150,200")]
    pub neurons: Vec<usize>,
    #[arg(long = "n", default_value_t = 3)]
    pub power: u32,
    #[arg(long, value_delimiter = ',', default_value = "poly,rect")]
    pub kind: Vec<EnergyKind>,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    /// Search bound on K (default: 64 times the perfect-recall estimate).
    #[arg(long)]
    pub max_k: Option<usize>,
    /// Relative bracket width at which the bisection stops.
    #[arg(long, default_value_t = 0.01)]
    pub resolution: f64,
    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,
}

/// Image files: either explicit paths or a directory with the standard
/// MNIST file names.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Directory with the four MNIST IDX files (default: `$DAM_MNIST_DIR`,
    /// else `./data/mnist`).
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    pub images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// Use only the first this many images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// desk-n2, desk-n3, desk-n20, paper-n2, paper-n3, paper-n20, paper-n30.
    #[arg(long, default_value = "desk-n3")]
    pub preset: String,
    #[arg(long = "K")]
    pub memories: Option<usize>,
    #[arg(long = "n")]
    pub power: Option<u32>,
    #[arg(long)]
    pub kind: Option<EnergyKind>,
    /// Objective exponent m in (c - t)^{2m}.
    #[arg(long = "m")]
    pub loss_power: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub t_initial: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub anneal_epochs: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub init_mean: Option<f64>,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub framing: Option<Framing>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Allow hyperparameters outside the published windows.
    #[arg(long)]
    pub no_paper_windows: bool,

    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long, requires_all = ["train_labels", "test_images", "test_labels"])]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Examples held out from the training file for validation; 0 trains on
    /// all of them.
    #[arg(long, default_value_t = 10000)]
    pub validation: usize,
    /// Truncate the training part (after the split) to this many examples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Test-error level whose first crossing is reported.
    #[arg(long, default_value_t = 0.02)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "dual")]
    pub readout: Framing,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Write the vote histogram (default when neither histogram is chosen).
    #[arg(long)]
    pub votes: bool,
    /// Write the dominant-contribution histogram.
    #[arg(long)]
    pub contrib: bool,
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 0.9)]
    pub band: f64,
    #[arg(long, default_value = "predicted")]
    pub channel: GapChannel,
    /// Memory indices to export as images.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20,21,22,23,24")]
    pub export: Vec<usize>,
}
