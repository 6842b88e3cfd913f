mod commands;
mod config;
mod error;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "RIGDEPTH_THREADS";

#[derive(Parser)]
#[command(
    name = "rigdepth",
    version,
    about = "Multi-camera self-supervised depth objective and direct optimizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-camera sample.
    Synth(SynthArgs),
    /// Optimize depths and poses of a sample.
    Optimize(OptimizeArgs),
    /// Compare predicted depths with a sample's ground truth.
    Eval(EvalArgs),
    /// Write synthesized views, loss heatmaps and overlap masks for one pair.
    WarpDebug(WarpDebugArgs),
    /// Lift depth maps into a rig-frame point cloud.
    ExportPly(ExportPlyArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene and rig description; the standard six-camera sample when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output sample directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the effective spec to this path.
    #[arg(long)]
    pub write_spec: Option<PathBuf>,
}

#[derive(Args)]
pub struct OptimizeArgs {
    /// Run config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// fsm, mono, fsm-no-stc, fsm-no-pcc, fsm-no-mask or mono-no-mask.
    #[arg(long)]
    pub preset: Option<String>,
    /// Steps at full resolution.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory with predicted depth maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Sample directory with ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    /// none, per-frame or shared.
    #[arg(long, default_value = "shared")]
    pub protocol: String,
    /// Depth cap in meters.
    #[arg(long, default_value_t = rigdepth::evaluation::DEFAULT_CAP)]
    pub cap: f64,
    /// Metrics CSV path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the report as JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct WarpDebugArgs {
    #[arg(long)]
    pub sample: PathBuf,
    /// Target camera name.
    #[arg(long)]
    pub target: String,
    /// Context camera name for the spatial and spatio-temporal warps.
    #[arg(long)]
    pub source: String,
    /// previous or next.
    #[arg(long, default_value = "next")]
    pub context: String,
    /// Depth maps to warp with; ground truth when omitted.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExportPlyArgs {
    /// Sample directory providing the rig, colors and self-occlusion masks.
    #[arg(long)]
    pub sample: PathBuf,
    /// Depth maps to lift; ground truth when omitted.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long, default_value = "fsm")]
    pub preset: String,
    /// Number of coordinates to check.
    #[arg(long, default_value_t = 50)]
    pub coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the pose noise at the checked point.
    #[arg(long, default_value_t = 0.01)]
    pub pose_noise: f64,
    #[arg(long)]
    pub json: bool,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Optimize(a) => commands::optimize(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::WarpDebug(a) => commands::warp_debug(&a),
        Command::ExportPly(a) => commands::export_ply(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
    }
}

fn main() -> ExitCode {
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
            eprintln!("rigdepth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
