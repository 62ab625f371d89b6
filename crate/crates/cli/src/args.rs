use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use viewrel_core::eval::Solver;
use viewrel_core::sampler::ViewpointStrategy;
use viewrel_core::synth::PoseStrategy;

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn parse_solver(s: &str) -> Result<Solver, String> {
    s.parse().map_err(|e: viewrel_core::Error| e.to_string())
}

fn parse_viewpoint_strategy(s: &str) -> Result<ViewpointStrategy, String> {
    s.parse().map_err(|e: viewrel_core::Error| e.to_string())
}

fn parse_pose_strategy(s: &str) -> Result<PoseStrategy, String> {
    s.parse().map_err(|e: viewrel_core::Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "viewrel",
    version,
    about = "Viewpoint-aware 3D referring-segmentation benchmark tools"
)]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct Workers {
    /// Worker threads.
    #[arg(long, env = "VIEWREL_WORKERS", default_value_t = default_workers())]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus of synthetic scene bundles.
    Synth(SynthArgs),
    /// Convert ScanNet scan directories into scene bundles.
    Convert(ConvertArgs),
    /// Annotate scene bundles into a referring-segmentation dataset.
    Generate(GenerateArgs),
    /// Print per-category sample counts of a dataset.
    Stats(StatsArgs),
    /// Print the rendered prompt of every sample.
    Prompts(PromptsArgs),
    /// Score a prediction file against a dataset.
    Eval(EvalArgs),
    /// Run a reference solver and write its predictions.
    Baseline(BaselineArgs),
    /// Re-derive every sample from geometry and report violations.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; one bundle per scene is written inside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    /// TOML file with synthesis settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub points_per_instance: Option<usize>,
    #[arg(long)]
    pub background_density: Option<f64>,
    #[arg(long)]
    pub poses: Option<usize>,
    #[arg(long, value_parser = parse_pose_strategy)]
    pub pose_strategy: Option<PoseStrategy>,
    /// Each scene gets a two-pose trajectory of opposed viewpoints.
    #[arg(long)]
    pub opposed: bool,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// ScanNet scan directories (each named after its scene id).
    #[arg(required = true)]
    pub scans: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Labels treated as background; defaults to wall, floor, ceiling.
    #[arg(long, value_delimiter = ',')]
    pub background_labels: Option<Vec<String>>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory of scene bundles.
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generation settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub viewpoints: Option<usize>,
    #[arg(long, value_parser = parse_viewpoint_strategy)]
    pub strategy: Option<ViewpointStrategy>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub min_instance_points: Option<usize>,
    /// Scene ids to leave out (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Option<Vec<String>>,
    /// Write one JSON line of ordered-pair relation counts per viewpoint.
    #[arg(long)]
    pub pair_log: Option<PathBuf>,
    /// One sample file per scene instead of a single file.
    #[arg(long)]
    pub shard_by_scene: bool,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON rows instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// JSON report path (default: next to the predictions).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-sample scores as JSON lines.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, value_parser = parse_solver)]
    pub solver: Solver,
    #[arg(long)]
    pub out: PathBuf,
    /// Random solver seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Blind solver: trajectory frame used as the canonical pose.
    #[arg(long, default_value_t = 0)]
    pub canonical_frame: usize,
    /// Overrides the generation config recorded in the dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[command(flatten)]
    pub workers: Workers,
}
