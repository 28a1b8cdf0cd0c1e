//! The `admgs` command line: dataset generation, training, rendering,
//! decomposition export, relighting, evaluation and gradient checking.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use admgs_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const BUILD_ID: &str = env!("ADMGS_BUILD_ID");

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "admgs", version, about = "Gaussian splatting with material/illumination decomposition")]
pub struct Cli {
    /// Worker threads (falls back to ADMGS_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-traversal dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Render the aligned RGB image of one frame.
    Render(ViewArgs),
    /// Export material, illumination, normal, depth and mask layers of one frame.
    Decompose(ViewArgs),
    /// Combine the material of one traversal with the light of another.
    Relight(RelightArgs),
    /// PSNR/SSIM of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a random scene.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Name of a built-in suite.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub suite: Option<String>,
    /// Scene description JSON file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Extra `key=value` overrides (dotted keys may also be given as `--key.sub=value`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration JSON; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Suppress per-step progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct ViewArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose camera list defines the frame indices.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub traversal: usize,
    /// Camera index in the dataset.
    #[arg(long)]
    pub frame: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RelightArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub material_traversal: usize,
    #[arg(long)]
    pub light_traversal: usize,
    #[arg(long)]
    pub frame: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScaleArg {
    Small,
    Full,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, value_enum, default_value_t = ScaleArg::Small)]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report and run info here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corrupt the analytic gradient of one class (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::MissingTraversal(_) => EXIT_USAGE,
        Error::TrainingDivergence { .. } => EXIT_DIVERGED,
        _ => EXIT_VERIFY,
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), String> {
    let from_env = std::env::var("ADMGS_THREADS").ok();
    let n = match (flag, from_env) {
        (Some(n), _) => Some(n),
        (None, Some(s)) => Some(s.trim().parse::<usize>().map_err(|_| format!("ADMGS_THREADS={s:?} is not a number"))?),
        (None, None) => None,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err("thread count must be at least 1".into());
        }
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parse `args` (program name first), run the command, return the exit code.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let (args, overrides) = config::split_overrides(args.into_iter().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads(cli.threads) {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match commands::dispatch(cli.command, overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
