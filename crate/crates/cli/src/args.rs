use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use ktboost::{BoostConfig, KernelParams, Learners, RhoSpec, Selection, TaskKind, TreeParams};

#[derive(Debug, Parser)]
#[command(name = "ktboost", version, about = "Boosting with regression trees and penalized kernel learners")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Worker threads for concurrent candidates and sweeps.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and save it.
    Train(TrainArgs),
    /// Write predictions of a saved model.
    Predict(PredictArgs),
    /// Score a saved model on labelled data.
    Evaluate(EvaluateArgs),
    /// Draw a dataset from the jump-plus-sine test function.
    Simulate(SimulateArgs),
    /// Tune and compare learner sets over repeated splits.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Binary,
    Multiclass,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => TaskKind::Regression,
            TaskArg::Binary => TaskKind::Binary,
            TaskArg::Multiclass => TaskKind::Multiclass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Squared,
    Logistic,
    Softmax,
}

impl LossArg {
    pub fn task(self) -> TaskArg {
        match self {
            LossArg::Squared => TaskArg::Regression,
            LossArg::Logistic => TaskArg::Binary,
            LossArg::Softmax => TaskArg::Multiclass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnerArg {
    Ktboost,
    Tree,
    Kernel,
}

impl From<LearnerArg> for Learners {
    fn from(l: LearnerArg) -> Self {
        match l {
            LearnerArg::Ktboost => Learners::Ktboost,
            LearnerArg::Tree => Learners::Tree,
            LearnerArg::Kernel => Learners::Kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Damped,
    Undamped,
}

impl From<SelectionArg> for Selection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Damped => Selection::Damped,
            SelectionArg::Undamped => Selection::Undamped,
        }
    }
}

/// How labelled CSV files are read.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Learning task.
    #[arg(long, value_enum, default_value = "regression")]
    pub task: TaskArg,

    /// Loss; must agree with --task (squared, logistic, softmax).
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,

    /// Target column, by header name or zero-based index (default: last).
    #[arg(long)]
    pub target: Option<String>,

    /// Files have no header row.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
pub struct BoostArgs {
    #[arg(long, value_enum, default_value = "ktboost")]
    pub learner: LearnerArg,

    /// Newton steps (default for classification).
    #[arg(long, conflicts_with = "gradient")]
    pub newton: bool,

    /// Gradient steps with unit Hessians (default for regression).
    #[arg(long)]
    pub gradient: bool,

    #[arg(long, default_value_t = 100)]
    pub iterations: usize,

    /// Shrinkage.
    #[arg(long, default_value_t = 0.1)]
    pub nu: f64,

    #[arg(long, default_value_t = 1)]
    pub max_depth: usize,

    /// Minimum rows per tree leaf.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub min_leaf: u64,

    /// Fixed kernel range.
    #[arg(long, group = "range")]
    pub rho: Option<f64>,

    /// Range that decays to 0.01 at the mean K-nearest-neighbor distance.
    #[arg(long, group = "range", value_name = "K")]
    pub rho_knn: Option<usize>,

    /// Range equal to the mean distance between all rows.
    #[arg(long, group = "range")]
    pub rho_slow: bool,

    /// Kernel ridge penalty.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    /// Nyström approximation with L sampled rows.
    #[arg(long, value_name = "L", value_parser = clap::value_parser!(u64).range(1..))]
    pub nystrom: Option<u64>,

    /// Seed for Nyström sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, default_value = "damped")]
    pub selection: SelectionArg,

    /// Stop after N iterations without validation improvement.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub early_stopping: Option<u64>,

    /// Use raw features instead of standardizing them.
    #[arg(long)]
    pub no_standardize: bool,
}

impl BoostArgs {
    pub fn config(&self, task: TaskArg) -> BoostConfig {
        let rho = match (self.rho, self.rho_knn, self.rho_slow) {
            (Some(rho), _, _) => RhoSpec::Fixed { rho },
            (_, Some(k), _) => RhoSpec::Knn { k },
            (_, _, true) => RhoSpec::Slow,
            _ => KernelParams::default().rho,
        };
        let newton = if self.newton {
            true
        } else if self.gradient {
            false
        } else {
            task != TaskArg::Regression
        };
        BoostConfig {
            iterations: self.iterations,
            nu: self.nu,
            newton,
            learners: self.learner.into(),
            tree: TreeParams {
                max_depth: self.max_depth,
                min_samples_leaf: self.min_leaf as usize,
            },
            kernel: KernelParams {
                rho,
                lambda: self.lambda,
                nystrom: self.nystrom.map(|l| l as usize),
                seed: self.seed,
            },
            selection: self.selection.into(),
            early_stopping_rounds: self.early_stopping.map(|r| r as usize),
            standardize: !self.no_standardize,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Validation CSV; selects the number of iterations kept.
    #[arg(long)]
    pub validation: Option<PathBuf>,

    /// Test CSV, scored after training.
    #[arg(long)]
    pub test: Option<PathBuf>,

    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub boost: BoostArgs,

    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,

    /// Per-iteration risk trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Fit report JSON (default: standard output).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Feature CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Column to drop before predicting, by header name or zero-based index.
    #[arg(long)]
    pub target: Option<String>,

    #[arg(long)]
    pub no_header: bool,

    /// Use only the first M iterations.
    #[arg(long, value_name = "M")]
    pub iterations: Option<usize>,

    /// Predictions CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Labelled CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Target column, by header name or zero-based index (default: last).
    #[arg(long)]
    pub target: Option<String>,

    #[arg(long)]
    pub no_header: bool,

    /// Use only the first M iterations.
    #[arg(long, value_name = "M")]
    pub iterations: Option<usize>,

    /// Result JSON (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,

    /// Seed of the random function.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Independent draw from the same function (e.g. 0 train, 1 validation, 2 test).
    #[arg(long, default_value_t = 0)]
    pub sample: u64,

    /// Noise standard deviation.
    #[arg(long)]
    pub noise_sd: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Dataset as NAME=PATH or PATH; repeatable.
    #[arg(long = "dataset", value_name = "NAME=PATH")]
    pub datasets: Vec<String>,

    #[command(flatten)]
    pub input: InputArgs,

    /// Learner sets to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ktboost,tree,kernel")]
    pub methods: Vec<LearnerArg>,

    /// Random train/validation/test splits per dataset.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub splits: u64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Newton steps (default for classification).
    #[arg(long, conflicts_with = "gradient")]
    pub newton: bool,

    /// Gradient steps (default for regression).
    #[arg(long)]
    pub gradient: bool,

    /// Shrinkage values; replaces the default grid (simulation: a single value).
    #[arg(long, value_delimiter = ',')]
    pub nu: Vec<f64>,

    /// Maximum boosting iterations.
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,

    #[arg(long, value_name = "L", value_parser = clap::value_parser!(u64).range(1..))]
    pub nystrom: Option<u64>,

    /// Also export per-iteration test metrics of every winning configuration.
    #[arg(long)]
    pub traces: bool,

    /// Run the jump-plus-sine simulation study instead of dataset splits.
    #[arg(long, conflicts_with = "datasets")]
    pub simulation: bool,

    /// Simulation replications.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub replications: u64,

    /// Simulation rows per training, validation and test set.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(2..))]
    pub n: u64,

    /// Simulation tree depth.
    #[arg(long, default_value_t = 1)]
    pub max_depth: usize,

    /// Simulation kernel range.
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,

    /// Simulation kernel penalty.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    #[arg(long, value_enum, default_value = "damped")]
    pub selection: SelectionArg,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
