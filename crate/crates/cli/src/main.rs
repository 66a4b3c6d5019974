//! `bcl`: generate data, train and fine-tune embeddings, cluster, evaluate.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or parse error, 4 numerical
//! failure, 1 anything else.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bcl_core::losses::LossKind;
use bcl_core::SpaceKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(bcl_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        use bcl_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::Infeasible(_) => 2,
                E::Parse { .. } | E::Io(_) | E::UnsupportedDataset(_) | E::DimensionMismatch { .. } => 3,
                E::NumericalFailure { .. } | E::DegenerateCentroid { .. } | E::DegenerateInput { .. } => 4,
                E::ContractViolation(_) => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<bcl_core::Error> for CliError {
    fn from(e: bcl_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "bcl", version, about = "Ball cluster learning for face-track clustering")]
struct Cli {
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic track datasets; several --out files share identities.
    Synth(SynthArgs),
    /// Print the header summary of a feature file as JSON.
    Stat { path: PathBuf },
    /// Train an embedding network.
    Train(TrainArgs),
    /// Fine-tune a model on pairs mined from an unlabelled dataset.
    Finetune(FinetuneArgs),
    /// Cluster the tracks of a dataset.
    Cluster(ClusterArgs),
    /// Score a predicted assignment against the labels of a dataset.
    Eval(EvalArgs),
    /// NMI and WCP for every number of clusters along the dendrogram.
    Sweep(SweepArgs),
    /// Time one training epoch per loss.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of identities.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zipf exponent of the tracks-per-identity law.
    #[arg(long, default_value_t = 1.2)]
    pub zipf: f64,
    /// Tracks of the most frequent identity.
    #[arg(long, default_value_t = 40)]
    pub max_tracks: usize,
    #[arg(long, default_value_t = 1)]
    pub frames_min: usize,
    #[arg(long, default_value_t = 8)]
    pub frames_max: usize,
    /// Minimum center distance in units of --within-std.
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.1)]
    pub within_std: f64,
    /// Extra per-track nuisance dimensions.
    #[arg(long, default_value_t = 0)]
    pub nuisance_dims: usize,
    #[arg(long, default_value_t = 0.0)]
    pub nuisance_std: f64,
    /// Give tracks time spans; identities start in [0, horizon).
    #[arg(long)]
    pub horizon: Option<i64>,
    #[arg(long, default_value_t = 20)]
    pub max_gap: i64,
    #[arg(long = "out", required = true)]
    pub outs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value = "bcl", value_parser = parse_loss)]
    pub loss: LossKind,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value = "hypersphere", value_parser = parse_space)]
    pub space: SpaceKind,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2000)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.003)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 4.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden widths, e.g. 256,128,64 (default depends on the input size).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV (default: checkpoint path + .csv).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.0003)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 64)]
    pub pairs_per_iteration: usize,
    /// Cap on mined positives and on mined negatives.
    #[arg(long, default_value_t = 100_000)]
    pub max_pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Without a model the mean base features are clustered.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// tau4b | threshold=T | k=K | kmeans=K | xmeans | gmeans
    #[arg(long, default_value = "tau4b")]
    pub mode: String,
    #[arg(long, default_value_t = 100)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Assignment CSV (`track,cluster`).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the dendrogram (HAC modes only).
    #[arg(long)]
    pub dendrogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// JSON output path; the same JSON is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Operating-point threshold (default 4b of the model).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_points: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Dataset to time on (default: 450 synthetic identities, >= 2000 tracks).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_loss)]
    pub losses: Option<Vec<LossKind>>,
    #[arg(long, default_value = "hypersphere", value_parser = parse_space)]
    pub space: SpaceKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output path; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: bcl_core::Error| e.to_string())
}

fn parse_space(s: &str) -> Result<SpaceKind, String> {
    s.parse().map_err(|e: bcl_core::Error| e.to_string())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("BCL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("BCL_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let m = cli.manifest.as_deref();
    match cli.command {
        Command::Synth(a) => commands::synth(&a, m),
        Command::Stat { path } => commands::stat(&path, m),
        Command::Train(a) => commands::train(&a, m),
        Command::Finetune(a) => commands::finetune(&a, m),
        Command::Cluster(a) => commands::cluster(&a, m),
        Command::Eval(a) => commands::eval(&a, m),
        Command::Sweep(a) => commands::sweep(&a, m),
        Command::Bench(a) => commands::bench(&a, m),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
