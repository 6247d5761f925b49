use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "disc",
    version,
    about = "Bayesian models of diachronic word-sense change"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Values given here override the config file.
#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of independent chains.
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    /// aux-uniform, pg, pg-approx, mala, hmc or mixed.
    #[arg(long, global = true)]
    pub sampler: Option<String>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    #[arg(long = "burn-in", global = true)]
    pub burn_in: Option<usize>,
    #[arg(long, global = true)]
    pub thin: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a snippet file.
    Fit(FitArgs),
    /// Simulate a corpus with known senses.
    Simulate(SimulateArgs),
    /// Score sense predictions against annotations.
    Evaluate(EvaluateArgs),
    /// Effective sample sizes and agreement between chains.
    Diagnose(DiagnoseArgs),
    /// Prior variances from probability-ratio judgements.
    Elicit(ElicitArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Snippet file (`data` in the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Frozen vocabulary, one word per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Sense annotations; enables scoring of the fit.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// disc or gasc.
    #[arg(long)]
    pub family: Option<String>,
    /// Number of senses.
    #[arg(long = "senses", short = 'K')]
    pub senses: Option<usize>,
    /// Time bins: increasing edges `a,b,c` or a map `label=1,label=2`.
    #[arg(long = "time-bins")]
    pub time_bins: Option<String>,
    /// Keep at most this many snippets per time-genre block.
    #[arg(long = "cap-per-block")]
    pub cap_per_block: Option<usize>,
    /// Drop tokens missing from a frozen vocabulary instead of failing.
    #[arg(long = "drop-unknown")]
    pub drop_unknown: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Hand-built interaction example (ex1, ex2, ex3) instead of a prior draw.
    #[arg(long)]
    pub design: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction table (`id  p_1 .. p_K`).
    #[arg(long, conflicts_with = "store")]
    pub predictions: Option<PathBuf>,
    /// Chain stores to predict from; requires `--data`.
    #[arg(long, num_args = 1.., requires = "data")]
    pub store: Vec<PathBuf>,
    /// Snippet file the chains were fitted to.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    /// Sense (from 1) treated as positive for sensitivity and specificity.
    #[arg(long)]
    pub positive: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Chain stores written by `fit`.
    #[arg(required = true, num_args = 1..)]
    pub stores: Vec<PathBuf>,
    /// Mean gaps above this many combined MCSEs count as disagreement.
    #[arg(long, default_value_t = 5.0)]
    pub threshold: f64,
    /// Words per sense in the ψ̃ benchmark.
    #[arg(long = "top-words", default_value_t = 20)]
    pub top_words: usize,
}

#[derive(Debug, Args)]
pub struct ElicitArgs {
    /// Probability ratio regarded as a 3-sigma event.
    #[arg(long)]
    pub ratio: f64,
    /// Autoregressive coefficient.
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// `phi` for sense prevalence, `words` for the χ/θ split.
    #[arg(long, default_value = "phi")]
    pub target: String,
    /// Also print the unrounded value.
    #[arg(long)]
    pub exact: bool,
}
