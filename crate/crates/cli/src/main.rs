mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Neural UV parameterization: global maps with learned seams, or multi-chart atlases.
#[derive(Debug, Parser)]
#[command(name = "param", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-chart parameterization with automatic seams (meshes or point clouds).
    Global(GlobalArgs),
    /// Multi-chart atlas with learned chart assignment.
    Charts(ChartArgs),
    /// Distortion report of an existing UV OBJ; no training.
    Eval(EvalArgs),
    /// Seam extraction on an existing UV OBJ.
    Seams(SeamArgs),
    /// Rerun a training command from its manifest.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Input mesh (.obj) or point cloud (.xyz, .ply).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial learning rate (cosine-decayed to 1e-5).
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// UV neighbors per point in the unwrapping loss.
    #[arg(long, default_value_t = 5)]
    pub ju: usize,
    #[arg(long, default_value_t = 0.2)]
    pub eps_coef: f64,
    /// Iterations between checkpoints written to the output directory; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Width of the hidden layers (default: the full-size networks).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Iterations between progress lines on stderr; 0 silences them.
    #[arg(long, default_value_t = 100)]
    pub progress_every: usize,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// 3D neighbors per point in seam extraction.
    #[arg(long, default_value_t = 3)]
    pub jcut: usize,
    #[arg(long, default_value_t = 0.02)]
    pub tau_coef: f64,
    /// Seam threshold floor in multiples of the UV sampling pitch; 0 disables.
    #[arg(long, default_value_t = 3.0)]
    pub tau_spacing: f64,
    /// Loss weights: unwrap,wrap,cycle,diff,tri.
    #[arg(long, value_delimiter = ',', num_args = 5)]
    pub weights: Option<Vec<f64>>,
    /// Treat the input as an unoriented point cloud (drops normal and triangle terms).
    #[arg(long)]
    pub pointcloud: bool,
    /// Latent width of the wrap/deform/cut blocks (default: 64, or `--hidden` if smaller).
    #[arg(long)]
    pub latent: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ChartArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of charts.
    #[arg(short = 'K', long = "charts", default_value_t = 8)]
    pub charts: usize,
    /// Loss weights: unwrap,cycle,tri.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// OBJ with `vt` records.
    #[arg(long)]
    pub input: PathBuf,
    /// Seam file whose vertices count toward the seam length.
    #[arg(long)]
    pub seams: Option<PathBuf>,
    /// Chart sidecar of an atlas export.
    #[arg(long)]
    pub charts: Option<PathBuf>,
    /// Directory for report.json (default: current directory).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeamArgs {
    /// OBJ with `vt` records; vertices with several `vt` are split per pair.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub jcut: usize,
    #[arg(long, default_value_t = 0.02)]
    pub tau_coef: f64,
    #[arg(long, default_value_t = 3.0)]
    pub tau_spacing: f64,
    /// Directory for seams.json (default: current directory).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// manifest.json of the run to repeat.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub progress_every: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
