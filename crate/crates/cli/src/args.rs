use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "hazard-ctmc", version, about = "Learn, sample and analyze cumulative CTMC models of item sets")]
pub struct Cli {
    /// Worker threads for data-parallel loops (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true, env = "HAZARD_CTMC_THREADS")]
    pub threads: Option<usize>,
    /// Suppress progress lines on standard error.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw observed sets (and optionally their times) from a model.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset.
    Fit(FitArgs),
    /// Evaluate models and run time-posterior analyses.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Emit a member of the equivalence family of the two-item model.
    Family(FamilyArgs),
    /// Run the scripted desk-scale reproductions and write a summary table.
    Repro(ReproArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub with_times: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalArg {
    Guided,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Marginal,
    GivenTimes,
    DiagonalOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum GradientArg {
    Mcmc,
    Exact,
}

/// Optimizer settings shared by `fit` and `eval stability`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub pretrain_epochs: usize,
    /// L1 weight.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// AdaGrad step size.
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    /// Retained MCMC samples per gradient estimate.
    #[arg(long, default_value_t = 50)]
    pub mcmc_samples: usize,
    #[arg(long, default_value_t = 10)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = ProposalArg::Guided)]
    pub proposal: ProposalArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Marginal)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = GradientArg::Mcmc)]
    pub gradient: GradientArg,
    /// Largest set whose orderings are enumerated exactly.
    #[arg(long, default_value_t = 10)]
    pub enum_cap: usize,
    /// Half-width of the uniform initialization of off-diagonal entries.
    #[arg(long, default_value_t = 0.2)]
    pub init_halfwidth: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fitted model (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Fit report (JSON); defaults to `<out stem>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// KL divergence of a fitted model's marginal sequences from a true model.
    Kl(KlArgs),
    /// Proportion of sequences in which one item precedes another.
    Order(OrderArgs),
    /// Parameter and order spread across random initializations.
    Stability(StabilityArgs),
    /// Posterior density of the observation time of samples.
    TimePosterior(TimePosteriorArgs),
    /// Average posterior variance against the number of background items.
    VarianceSweep(VarianceSweepArgs),
    /// Constants of the posterior concentration bound.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct KlArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Items of the fitted model that correspond, in order, to the truth's
    /// items (default: the first ones).
    #[arg(long, value_delimiter = ',')]
    pub restrict: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1_000_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report; plot data goes next to it with a `.csv` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OrderArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Two items `a,b`; every ordered pair when omitted.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub pair: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1_000_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub inits: usize,
    /// Seed of the first initialization; the others follow consecutively.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sequences drawn per fit to compare order proportions (0 skips).
    #[arg(long, default_value_t = 100_000)]
    pub order_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TimePosteriorArgs {
    /// Model with declared blocks (or small enough to enumerate).
    #[arg(long, requires = "data", conflicts_with_all = ["theta_plus", "m", "k"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Samples of the dataset to analyze (1-based; default all).
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    /// Closed form for `k` of `m` independent items with this log-rate.
    #[arg(long, allow_hyphen_values = true, requires_all = ["m", "k"])]
    pub theta_plus: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 21.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 4000)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 10)]
    pub enum_cap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundArg {
    Iid,
    Uniform,
    Pairs,
}

#[derive(Debug, Args, Serialize)]
pub struct VarianceSweepArgs {
    #[arg(long, value_enum, default_value_t = BackgroundArg::Iid)]
    pub background: BackgroundArg,
    /// Baseline log-rate of the background items (iid and pairs).
    #[arg(long, allow_hyphen_values = true, default_value_t = -2.0)]
    pub theta_plus: f64,
    /// Range of log-rates for the uniform background.
    #[arg(long, allow_hyphen_values = true, default_value_t = -4.0)]
    pub lo: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = -2.0)]
    pub hi: f64,
    /// Interaction within each pair.
    #[arg(long, allow_hyphen_values = true, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100")]
    pub m: Vec<usize>,
    /// Simulated observations per value of `m`.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 21.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 4000)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundsArgs {
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',', default_value = "-3,-2,-1,0")]
    pub theta_plus: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub t_star: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FamilyArgs {
    #[arg(long, allow_hyphen_values = true, default_value_t = 4.0)]
    pub alpha: f64,
    /// Weight of item 1 in the family member.
    #[arg(long, allow_hyphen_values = true)]
    pub s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleArg {
    /// Seconds; exercises every experiment end to end.
    Smoke,
    /// Minutes to an hour; the sizes used to check the published shapes.
    Desk,
}

#[derive(Debug, Args, Serialize)]
pub struct ReproArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Experiments to run (default all).
    #[arg(long, value_delimiter = ',', value_parser = ["kl", "order", "gradient", "variance"])]
    pub only: Option<Vec<String>>,
}
