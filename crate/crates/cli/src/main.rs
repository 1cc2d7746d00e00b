mod commands;
mod dataset;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frustum_forge::Error;

const THREADS_ENV: &str = "FRUSTUM_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "frustum-forge", version, about = "Open-vocabulary 3D proposals from 2D detections")]
pub struct Cli {
    /// Worker threads for scene-level parallelism (falls back to FRUSTUM_FORGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Include per-stage wall-clock timings in the run report.
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Enumerate frustum candidates for every detection of a scene.
    Seek(SeekArgs),
    /// Pick one candidate per frustum.
    Rank(RankArgs),
    /// Paste banked instances into a scene.
    Propagate(PropagateArgs),
    /// Run the self-training rounds over a dataset.
    Selftrain(SelftrainArgs),
    /// Relabel 3D predictions with image-level class scores.
    Fuse(FuseArgs),
    /// Cluster labelled points into boxes.
    Cluster(ClusterArgs),
    /// Score predictions against a scene's annotations.
    Eval(EvalArgs),
    /// synth-or-load, seek, rank, propagate, selftrain and eval in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the run report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator settings JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeekArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    alpha_iou: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct SelftrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory laid out like the dataset holding `detections.json` files.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bank_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pred3d: PathBuf,
    /// JSON array of `{"class_id", "score"}`, one per 3D prediction.
    #[arg(long)]
    vlm: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    scene: PathBuf,
    /// JSON array with one class label per point, -1 for unlabelled.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long)]
    label_weight: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Existing dataset directory; a synthetic one is generated when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Generator settings JSON used when no dataset is given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    alpha_iou: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Directory for CSV series (PR curves, oracle sweeps).
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Data(e)
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Data(e) => write!(f, "{e}"),
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(raw) if !raw.trim().is_empty() => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Config(format!("{THREADS_ENV}={raw:?} is not a thread count"))),
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Failure::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let timings = cli.timings;
    match cli.command {
        Command::Synth(a) => commands::synth(a, timings),
        Command::Seek(a) => commands::seek(a, timings),
        Command::Rank(a) => commands::rank(a, timings),
        Command::Propagate(a) => commands::propagate(a, timings),
        Command::Selftrain(a) => commands::selftrain(a, timings),
        Command::Fuse(a) => commands::fuse(a, timings),
        Command::Cluster(a) => commands::cluster(a, timings),
        Command::Eval(a) => commands::eval(a),
        Command::Pipeline(a) => commands::pipeline(a, timings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
