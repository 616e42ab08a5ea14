mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use thiserror::Error;

const AFTER_HELP: &str = "\
Files:
  skeletons    JSON lines, one sequence per line
  annotations  CSV: instance_id, participant_id, corrupted, 26 category flags, valence, arousal,
               dominance, char_gender, char_age, char_ethnicity, start_frame, end_frame
  labels       CSV: instance_id, ds_<category> x26, label_<category> x26, valence, arousal,
               dominance, confidence, split
  features     CSV: instance_id then one column per feature slot; empty field = missing
  predictions  CSV: instance_id, score_<category> x26, valence, arousal, dominance
  hits         CSV: hit_id, participant_id, instance_id (one row per instance in the HIT)
  gold         TOML: one [[control]] table per control instance
  pool         CSV: instance_id, media_url, frames
  profiles     a QC report (JSON) written by `qc`

Config file (--config PATH): one `key=value` per line, `#` comments. Keys are long flag
names (`min_effective` and `min-effective` are the same); `qc.min_effective=10` applies to
one subcommand only. Flags given on the command line override the file.

Output `-` means standard output. Every random choice is driven by --seed; output does not
depend on --threads.

Exit status: 0 success, 1 failure, 2 missing input file or bad usage, 3 malformed input.";

#[derive(Debug, Parser)]
#[command(name = "bodyaffect-cli", version, about = "Body-affect toolkit: LMA features, crowd labels, QC, evaluation", after_help = AFTER_HELP)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Skeleton sequences to an LMA feature table.
    Extract(ExtractArgs),
    /// Annotations to a consensus label table with train/val/test splits.
    Aggregate(AggregateArgs),
    /// Annotations and HITs to a QC report (reliability, outcomes, statuses).
    Qc(QcArgs),
    /// Fleiss' kappa per category and demographic question.
    Kappa(KappaArgs),
    /// Predictions against labels: AP, RA, R², MSE and ERS.
    Evaluate(EvaluateArgs),
    /// Single-feature R² of a label column on every feature.
    Signif(SignifArgs),
    /// Train one random forest per category and per VAD dimension.
    Train(TrainArgs),
    /// Apply a trained model bundle to a feature table.
    Predict(PredictArgs),
    /// Synthetic annotations, skeletons, labels or chance predictions.
    Simulate(SimulateArgs),
    /// Run the annotation session server.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Skeleton JSON-lines file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Frame lag of the finite differences.
    #[arg(long, default_value_t = 15)]
    pub tau: usize,
    /// Limb list file (one `joint-joint` pair per line); the built-in 23-limb graph otherwise.
    #[arg(long)]
    pub limbs: Option<PathBuf>,
    /// Drop sequences failing the ingestion filters below.
    #[arg(long)]
    pub validate: bool,
    #[arg(long, default_value_t = 100)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 300)]
    pub max_frames: usize,
    /// Minimum fraction of frames with any visible joint.
    #[arg(long, default_value_t = 0.8)]
    pub min_coverage: f64,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Instances below this confidence are left out.
    #[arg(long, default_value_t = 0.95)]
    pub confidence_min: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test proportions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    pub split: String,
    /// CSV `instance_id,movie_id`; otherwise the id prefix before `/`.
    #[arg(long)]
    pub movies: Option<PathBuf>,
    /// QC report to take reliabilities from; scored from the annotations otherwise.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// With --profiles, drop all records of excluded participants.
    #[arg(long)]
    pub drop_excluded: bool,
    /// Dawid-Skene pseudo-count (0 = standard EM).
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// CSV of left-out instances and why.
    #[arg(long)]
    pub excluded: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QcArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub hits: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub reliability_threshold: f64,
    /// Annotations needed before low reliability can exclude.
    #[arg(long, default_value_t = 20)]
    pub min_effective: usize,
    #[arg(long, default_value_t = 20)]
    pub hit_size: usize,
    #[arg(long, default_value_t = 2)]
    pub violation_limit: usize,
    #[arg(long, default_value_t = 3600)]
    pub block_secs: u64,
    /// Evaluation time (unix seconds) for block expiry.
    #[arg(long, default_value_t = 0)]
    pub now: u64,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Add a column restricted to reliable participants.
    #[arg(long)]
    pub filtered: bool,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub reliability_threshold: f64,
    /// QC report to take reliabilities from; scored from the annotations otherwise.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SignifArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// `valence`, `arousal`, `dominance` or a category name (0/1 label).
    #[arg(long, default_value = "valence")]
    pub target: String,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    /// 0 grows trees without a depth limit.
    #[arg(long, default_value_t = 16)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pick hyperparameters per model by k-fold search over the default grid.
    #[arg(long)]
    pub cv: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Annotations,
    Skeletons,
    Labels,
    Chance,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub kind: SimKind,
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instances (annotations, labels) or sequences (skeletons).
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    #[arg(long, default_value_t = 20)]
    pub movies: usize,
    #[arg(long, default_value_t = 16)]
    pub honest: usize,
    /// Noise of honest workers' VAD scores.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 4)]
    pub dishonest: usize,
    #[arg(long, default_value_t = 0)]
    pub exotic: usize,
    /// Offset of exotic workers' VAD scores.
    #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
    pub delta: i8,
    #[arg(long, default_value_t = 5)]
    pub per_instance: usize,
    /// Planted truth as a label table (annotations only).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Label table to score by chance (chance only).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    LeastAnnotated,
    Uniform,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Append-only event log; replayed on start when it exists.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SamplingArg::LeastAnnotated)]
    pub sampling: SamplingArg,
    /// Annotations wanted per instance.
    #[arg(long, default_value_t = 5)]
    pub target: usize,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub reliability_threshold: f64,
    #[arg(long, default_value_t = 20)]
    pub min_effective: usize,
    #[arg(long, default_value_t = 3600)]
    pub block_secs: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: no such file", .0.display())]
    Missing(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Missing(_) | CliError::Usage(_) => 2,
            CliError::Schema(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(path.to_path_buf())
        } else {
            CliError::Failed(format!("{}: {e}", path.display()))
        }
    }
}

fn run() -> Result<(), CliError> {
    let cmd = Cli::command();
    let argv = config::expand(&cmd, std::env::args_os().collect())?;
    let matches = cmd.try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    commands::dispatch(cli)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
