//! `mie`: train, apply and evaluate multi-instance embedding models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mie_core::losses::DEFAULT_MARGIN;
use mie_core::LossKind;
use serde::{Deserialize, Serialize};

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "mie", version, about = "Multi-instance visual-semantic embedding toolkit")]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train an embedding from a label file and a bag file.
    Train(TrainArgs),
    /// Rank labels for each bag and keep the top k.
    Predict(PredictArgs),
    /// Score top-k predictions against ground-truth bags.
    Evaluate(EvaluateArgs),
    /// Predict over a label space not used in training.
    Zeroshot(ZeroshotArgs),
    /// Generate a synthetic label space and bag files.
    Synth(SynthArgs),
    /// Compare analytic loss gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Zeroshot(_) => "zeroshot",
            Command::Synth(_) => "synth",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
        }
    }

    /// Commands without randomness record seed 0.
    pub fn seed(&self) -> u64 {
        match self {
            Command::Train(a) => a.seed,
            Command::Evaluate(a) => a.seed,
            Command::Synth(a) => a.seed,
            Command::Gradcheck(a) => a.seed,
            Command::Predict(_) | Command::Zeroshot(_) | Command::Replay(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Label vectors, one `name<TAB>v1<TAB>...` line per label.
    #[arg(long)]
    pub labels: PathBuf,
    /// Training bags (JSON Lines).
    #[arg(long)]
    pub bags: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// rank (whole image only), mie, or mie-warp (mie with rank weights).
    #[arg(long)]
    pub loss: LossKind,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Epochs between learning-rate drops.
    #[arg(long, default_value_t = 10)]
    pub lr_step: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr_gamma: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    /// Sample at most this many negatives per positive label.
    #[arg(long)]
    pub negative_cap: Option<usize>,
    /// Count only negatives when ranking a positive label (mie-warp).
    #[arg(long)]
    pub rank_excludes_positives: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch history file [default: <out>.history.jsonl].
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Record wall-clock seconds in the history (makes it run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Predictions file (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Predictions file; each bag's first k entries are scored.
    #[arg(long, required_unless_present = "upper_bound")]
    pub predictions: Option<PathBuf>,
    /// Bags carrying the ground-truth labels.
    #[arg(long)]
    pub truth_bags: PathBuf,
    /// Label file defining the vocabulary.
    #[arg(long)]
    pub labels: PathBuf,
    /// Labels assigned per image (3 and 5 are the usual settings).
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Score the randomized ground-truth assignment instead of predictions.
    #[arg(long, conflicts_with = "predictions")]
    pub upper_bound: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON); the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ZeroshotArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Label file of the unseen vocabulary.
    #[arg(long)]
    pub unseen_labels: PathBuf,
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also report MAP@k (bags must carry exactly one label each).
    #[arg(long)]
    pub map: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    pub map_k: Vec<usize>,
    /// Average hits over images instead of over classes.
    #[arg(long)]
    pub micro: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Directory for labels.tsv, train.jsonl and heldout.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    pub semantic_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub min_labels: usize,
    #[arg(long, default_value_t = 3)]
    pub max_labels: usize,
    /// Instances per bag that belong to no label.
    #[arg(long, default_value_t = 2)]
    pub distractors: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 2200)]
    pub num_bags: usize,
    #[arg(long, default_value_t = 0.1, conflicts_with = "heldout_count")]
    pub heldout_fraction: f64,
    /// Exact number of held-out bags; overrides the fraction.
    #[arg(long)]
    pub heldout_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub bags: PathBuf,
    /// Loss to check; all three when omitted.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Evaluation points per loss. Bags are used in file order, cycling.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Fresh random models tried per point before giving up on genericity.
    #[arg(long, default_value_t = 50)]
    pub max_attempts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Summary file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command, cli.jobs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
