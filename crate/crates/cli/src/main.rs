mod commands;
mod config;
mod digest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::TrainFlags;

/// Radiance fields over fixed reference images: training, rendering,
/// evaluation and ablations.
#[derive(Parser, Debug)]
#[command(name = "mpnerf", version, args_override_self = true)]
struct Cli {
    /// Worker threads (falls back to MPNERF_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a decoder on one scene or on a multi-object collection.
    Train(TrainArgs),
    /// Render views from a trained run.
    Render(RenderArgs),
    /// Render the reference-mixing sweep (k = 0, 20, 40, 60, 80 % of n).
    Interpolate(InterpolateArgs),
    /// Score a trained run on held-out views, or build a cross-class matrix.
    Eval(EvalArgs),
    /// Train once per reference count and resolution; emit a PSNR table.
    Ablate(AblateArgs),
    /// Write a procedurally rendered scene or object collection.
    GenerateToy(GenerateToyArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Run directory for checkpoints, metrics and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CameraArgs {
    /// Transforms-style pose file (camera_angle_x + frames).
    #[arg(long, conflicts_with = "orbit")]
    pub poses: Option<PathBuf>,
    /// Number of evenly spaced orbit poses.
    #[arg(long)]
    pub orbit: Option<usize>,
    #[arg(long, default_value_t = 30.0)]
    pub elevation_deg: f64,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    /// Output side length in pixels (defaults to the reference resolution).
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Training run directory (checkpoint.json, refs/, config.json).
    #[arg(long)]
    pub run: PathBuf,
    /// Reference directory to use instead of the run's own.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Second reference set for mixing.
    #[arg(long, requires = "mix")]
    pub mix_refs: Option<PathBuf>,
    /// Take the first k references from the run and the rest from --mix-refs.
    #[arg(long, requires = "mix_refs")]
    pub mix: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Reference set of the first object (defaults to the run's own).
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Reference set of the second object.
    #[arg(long)]
    pub mix_refs: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Training run directory.
    #[arg(long, required_unless_present = "matrix", conflicts_with = "matrix")]
    pub run: Option<PathBuf>,
    /// Scene to evaluate (defaults to the run's training scene).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Cross-class matrix over these collection runs (one per class).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub matrix: Option<Vec<PathBuf>>,
    /// Held-out views scored per object in collection evaluation (0 = all).
    #[arg(long, default_value_t = 0)]
    pub views_per_object: usize,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long, value_delimiter = ',', required = true)]
    pub counts: Vec<usize>,
    /// Reference resolutions (default: native).
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Vec<usize>,
    /// Test views scored per setting (0 = all).
    #[arg(long, default_value_t = 0)]
    pub test_views: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateToyArgs {
    /// scene | collection
    #[arg(long, default_value = "scene")]
    pub kind: String,
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub train_views: usize,
    #[arg(long, default_value_t = 20)]
    pub test_views: usize,
    #[arg(long, default_value_t = 4)]
    pub train_objects: usize,
    #[arg(long, default_value_t = 2)]
    pub test_objects: usize,
    /// Classes for collections (cubes, spheres, towers).
    #[arg(long, value_delimiter = ',', default_value = "cubes,spheres,towers")]
    pub classes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(mpnerf::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(mpnerf::Error::Numeric(_)) => 3,
            CliError::Core(_) => 1,
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

impl From<mpnerf::Error> for CliError {
    fn from(e: mpnerf::Error) -> Self {
        CliError::Core(e)
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("MPNERF_THREADS") {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("MPNERF_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::GenerateToy(a) => commands::generate_toy(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
