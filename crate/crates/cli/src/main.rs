mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::List;

/// Truth inference over labeling-function votes for entity matching.
#[derive(Debug, Parser)]
#[command(name = "simplem", version)]
struct Cli {
    /// Flat `key = value` file. Keys are long flag names; flags win over it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Maximum number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Log debug detail to standard error.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Infer match probabilities from a labeling matrix.
    Infer(InferArgs),
    /// Generate training pairs for the transitivity network.
    TransData(TransDataArgs),
    /// Train the transitivity network.
    TransTrain(TransTrainArgs),
    /// Duplicate-free detection or labeling-function dependency detection.
    Diag(DiagArgs),
    /// Precision, recall and F1 of a probability file against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic labeling matrix with ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Labeling matrix CSV.
    #[arg(long, short, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Probability CSV to write.
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// simple, simple-em, mv (majority vote) or ds (Dawid-Skene) [default: simple].
    #[arg(long)]
    pub mode: Option<String>,
    /// With simple-em: none, left, right, two-side, learned or auto [default: auto].
    #[arg(long)]
    pub transitivity: Option<String>,
    /// Trained transitivity network for learned mode.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Known duplicate-freeness `LEFT,RIGHT` (e.g. `true,false`) for auto mode.
    #[arg(long, value_name = "LEFT,RIGHT")]
    pub dupfree_hints: Option<List<bool>>,
    /// Dup-free report written in auto mode [default: <output>.dupfree.json].
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 10]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Stop once fewer than this fraction of hard labels flip [default: 0.001].
    #[arg(long)]
    pub convergence_flip_fraction: Option<f64>,
    /// [default: 1e-6]
    #[arg(long)]
    pub prob_clamp_epsilon: Option<f64>,
    /// [default: 5]
    #[arg(long)]
    pub cv_folds: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    pub smote_neighbors: Option<usize>,
    /// [default: 100]
    #[arg(long)]
    pub n_trees: Option<usize>,
    /// Significance level of the dup-free test [default: 0.05].
    #[arg(long)]
    pub dupfree_c: Option<f64>,
    /// Monte Carlo repeats per grid point of the dup-free test [default: 1000].
    #[arg(long)]
    pub sim_repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransDataArgs {
    /// Number of (unconstrained, constrained) matrix pairs.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transitivity penalty weight [default: 100].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Optimizer steps per matrix [default: 2000].
    #[arg(long)]
    pub steps: Option<usize>,
    /// [default: 0.5]
    #[arg(long)]
    pub cluster_fraction: Option<f64>,
    /// [default: 0.3]
    #[arg(long)]
    pub padded_fraction: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub max_clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransTrainArgs {
    /// Dataset written by trans-data.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Model file to write.
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// [default: 40]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 0.003]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub batch_matrices: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub cells_per_matrix: Option<usize>,
    /// Row encoder widths [default: 64,64].
    #[arg(long, value_name = "W,..")]
    pub encoder: Option<List<usize>>,
    /// Head hidden widths [default: 64].
    #[arg(long, value_name = "W,..")]
    pub head: Option<List<usize>>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    /// dupfree or lfdeps.
    #[arg(long)]
    pub what: Option<String>,
    /// Labeling matrix CSV.
    #[arg(long, short, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Probability CSV for the matrix; inferred with `simple` when absent.
    #[arg(long, value_name = "PATH")]
    pub probs: Option<PathBuf>,
    /// dupfree only: CSV `left_id,right_id` of predicted matches instead of a matrix.
    #[arg(long, value_name = "PATH")]
    pub matches: Option<PathBuf>,
    /// Left table size, required with --matches.
    #[arg(long)]
    pub n_left: Option<usize>,
    /// Right table size, required with --matches.
    #[arg(long)]
    pub n_right: Option<usize>,
    /// Report to write; standard output when absent.
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 0.05]
    #[arg(long)]
    pub dupfree_c: Option<f64>,
    /// [default: 1000]
    #[arg(long)]
    pub sim_repeats: Option<usize>,
    /// Significance level of the dependency test [default: 0.05].
    #[arg(long)]
    pub lfdeps_c: Option<f64>,
    /// [default: 3]
    #[arg(long)]
    pub max_rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Probability CSV.
    #[arg(long, value_name = "PATH")]
    pub pred: Option<PathBuf>,
    /// Ground truth CSV `<ids>,label`.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    /// Ground truth labels only some pairs; score those.
    #[arg(long)]
    pub partial: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Labeling matrix CSV to write.
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Ground truth CSV to write.
    #[arg(long, value_name = "PATH")]
    pub truth_output: Option<PathBuf>,
    /// two-table or single-table [default: two-table].
    #[arg(long)]
    pub task: Option<String>,
    /// [default: 2000]
    #[arg(long)]
    pub n_pairs: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    pub positive_rate: Option<f64>,
    /// Weights of entity sizes 1, 2, .. [default: 1 (two-table), 0,1 (single-table)].
    #[arg(long, value_name = "W,..")]
    pub cluster_sizes: Option<List<f64>>,
    /// One accuracy per LF [default: 0.9,0.85,0.8,0.7,0.6,0.6].
    #[arg(long, value_name = "A,..")]
    pub lf_accuracies: Option<List<f64>>,
    /// Abstain probability of every LF [default: 0.3].
    #[arg(long)]
    pub abstain: Option<f64>,
    /// Copies `TARGET:SOURCE:FLIP,..`; LF TARGET copies SOURCE with votes negated w.p. FLIP.
    #[arg(long, value_name = "T:S:F,..")]
    pub duplicates: Option<String>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<simplem::Error> for CliError {
    fn from(e: simplem::Error) -> Self {
        let code = match e {
            simplem::Error::Numerical(_) => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Info
        })
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => config::ConfigFile::load(p)?,
        None => config::ConfigFile::default(),
    };
    if let Some(n) = cfg.pick(cli.threads, "threads")? {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Infer(a) => commands::infer(&cfg, a),
        Command::TransData(a) => commands::trans_data(&cfg, a),
        Command::TransTrain(a) => commands::trans_train(&cfg, a),
        Command::Diag(a) => commands::diag(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Synth(a) => commands::synth(&cfg, a),
    }
}
