use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "motion-fatigue", version, about = "Muscle fatigue simulation and fatigue-aware motion modulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-link arm dataset (angles and torques).
    GenData(GenDataArgs),
    /// Simulate the three-compartment fatigue model and print or save the trajectory.
    #[command(name = "sim-3cc")]
    Sim3cc(SimArgs),
    /// Train a compartment network for one joint.
    TrainPinn(TrainPinnArgs),
    /// Train inverse or forward dynamics surrogates on a generated dataset.
    TrainDyn(TrainDynArgs),
    /// Modulate a motion with fatigue through trained surrogates.
    ApplyFatigue(ApplyArgs),
    /// Score a predicted sequence against ground truth (NRMSE %, R²).
    Eval(EvalArgs),
    /// Export fatigued versus baseline curves for a sweep of capacity levels.
    ExportCurves(ExportArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    #[arg(long, help = "Output directory")]
    pub out: PathBuf,
    #[arg(long, help = "Number of trials [default: 20]")]
    pub trials: Option<usize>,
    #[arg(long, help = "Frames per trial [default: 200]")]
    pub frames: Option<usize>,
    #[arg(long, help = "Frame interval in seconds [default: 0.05]")]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, help = "JSON config file")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SimArgs {
    #[arg(long = "F", help = "Fatigue rate, 1/s [default: 0.00912]")]
    pub fatigue: Option<f64>,
    #[arg(long = "R", help = "Recovery rate, 1/s [default: 0.00094]")]
    pub recovery: Option<f64>,
    #[arg(long = "LD", help = "Development gain [default: 10]")]
    pub develop: Option<f64>,
    #[arg(long = "LR", help = "Relaxation gain [default: 10]")]
    pub relax: Option<f64>,
    #[arg(long, help = "Target load: const:<level> or onset:<level>:<tau> [default: const:100]")]
    pub tl: Option<String>,
    #[arg(long = "t", help = "Duration in seconds [default: 180]")]
    pub duration: Option<f64>,
    #[arg(long, help = "Step in seconds [default: 0.05]")]
    pub dt: Option<f64>,
    #[arg(long, help = "Fatigue sensitivity for the RC_lambda column [default: 1]")]
    pub lambda: Option<f64>,
    #[arg(long, help = "Output directory; CSV goes to stdout when omitted")]
    pub out: Option<PathBuf>,
    #[arg(long, help = "JSON config file")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Supervised,
    Unsupervised,
}

#[derive(Debug, clap::Args)]
pub struct TrainPinnArgs {
    #[arg(long, help = "Joint name [default: elbow]")]
    pub joint: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, help = "Profiles JSON with the joint's F and R")]
    pub profiles: Option<PathBuf>,
    #[arg(long, help = "Load for the oracle trajectory")]
    pub load: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, help = "Output directory [default: pinn-<joint>]")]
    pub out: Option<PathBuf>,
    #[arg(long, help = "JSON config file")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Id,
    Fd,
}

#[derive(Debug, clap::Args)]
pub struct TrainDynArgs {
    #[arg(long, help = "Dataset directory written by gen-data")]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    #[arg(long, help = "Output joint; repeat for several [default: all]")]
    pub joint: Vec<String>,
    #[arg(long, help = "Train one model for all joints")]
    pub multi: bool,
    #[arg(long, help = "Add the equation-of-motion loss (ID only)")]
    pub physics: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, help = "JSON config file")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ApplyArgs {
    #[arg(long, help = "Joint-angle CSV")]
    pub motion: PathBuf,
    #[arg(long, help = "Fatigue profiles JSON")]
    pub profiles: PathBuf,
    #[arg(long, help = "dynamic or fixed:<level> [default: dynamic]")]
    pub mode: Option<String>,
    #[arg(long, required = true, help = "Directory of surrogate checkpoints; repeatable")]
    pub models: Vec<PathBuf>,
    #[arg(long, help = "Compartment network checkpoint; repeatable")]
    pub pinn: Vec<PathBuf>,
    #[arg(long, help = "Compartment step in seconds")]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, help = "JSON config file")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, help = "Also write metrics.json and a manifest here")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub motion: PathBuf,
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long, required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', help = "Fixed capacity levels [default: 100,90,80,70]")]
    pub levels: Option<Vec<f64>>,
    #[arg(long, help = "Skip the dynamic run")]
    pub no_dynamic: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, help = "JSON config file")]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
