//! The `lkd` command-line tool.
//!
//! Every flag and its default is listed in `--help`:
//!
//! ```
//! use clap::CommandFactory;
//! let mut cmd = lkd_cli::Cli::command();
//! let help = cmd.render_long_help().to_string();
//! for flag in ["--threads", "--seed", "LKD_SEED", "synth", "train", "eval", "count", "footprint", "erf", "gradcheck"] {
//!     assert!(help.contains(flag), "{flag}");
//! }
//! let count = cmd.find_subcommand_mut("count").unwrap().render_long_help().to_string();
//! assert!(count.contains("--hw") && count.contains("[default: 256]"));
//! ```

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{error_line, CliError, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};

/// Exit codes: 0 success, 1 usage error, 2 validation error, 3 numeric
/// failure (NaN during training, failed gradient check). On failure the last
/// line on stderr is a JSON record {"error", "code", "message"}.
#[derive(Debug, Parser)]
#[command(
    name = "lkd",
    version,
    about = "Decomposed large-kernel dehazing toolkit"
)]
pub struct Cli {
    /// Worker threads for parallel kernels [default: all cores].
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Seed for data synthesis, training (and model init) and ERF sampling;
    /// overrides the seeds in the config [default: the config's seeds].
    #[arg(long, global = true, env = "LKD_SEED", value_name = "SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize hazy/clean pairs into a directory with a manifest.
    Synth(SynthArgs),
    /// Train a model; writes model.ckpt, metrics.csv and config.json.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset; per-image and mean PSNR/SSIM as CSV.
    Eval(EvalArgs),
    /// Parameter and MAC counts, or the kernel-formula values.
    Count(CountArgs),
    /// Footprint of a decomposed large kernel.
    Footprint(FootprintArgs),
    /// Effective receptive field of a checkpoint.
    Erf(ErfArgs),
    /// Finite-difference gradient checks; exits 3 if any case fails.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON run config with optional model/train/data/erf sections
    /// [default: desk-scale tiny model, 2000 steps, 200 pairs of 64x64].
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Training set written by `synth` [default: synthesized in memory from
    /// the config's data section].
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Held-out set scored at every evaluation point [default: none; PSNR
    /// and SSIM columns are NaN].
    #[arg(long, value_name = "DIR")]
    pub eval_data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// Dataset directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    T,
    S,
    B,
    L,
    Desk,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Model size to count.
    #[arg(long, value_enum, default_value_t = VariantArg::T)]
    pub variant: VariantArg,
    /// Count the config's model section instead of a preset [default: unset].
    #[arg(long, value_name = "FILE", conflicts_with = "variant")]
    pub config: Option<PathBuf>,
    /// Input height and width.
    #[arg(long, default_value_t = 256)]
    pub hw: usize,
    /// Evaluate the printed kernel formula at K d C and compare it with the
    /// exact layer count [default: unset].
    #[arg(long, num_args = 3, value_names = ["K", "D", "C"], conflicts_with = "compare")]
    pub eq3: Option<Vec<usize>>,
    /// Direct vs decomposed weight counts for these kernel sizes, as CSV
    /// [default: unset].
    #[arg(long, value_delimiter = ',', value_name = "K,...")]
    pub compare: Option<Vec<usize>>,
    /// Dilation for --compare.
    #[arg(long, default_value_t = 3, requires = "compare")]
    pub dilation: usize,
    /// Channels for --compare.
    #[arg(long, default_value_t = 24, requires = "compare")]
    pub channels: usize,
}

#[derive(Debug, Args)]
pub struct FootprintArgs {
    /// Target kernel size.
    #[arg(long = "K", value_name = "K", default_value_t = 21)]
    pub kernel: usize,
    /// Dilation of the second leg.
    #[arg(long = "d", value_name = "D", default_value_t = 3)]
    pub dilation: usize,
    /// Also print the footprint as a character grid.
    #[arg(long)]
    pub grid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TapArg {
    Bottleneck,
    Output,
}

#[derive(Debug, Args)]
pub struct ErfArgs {
    /// Checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// Feature map to probe [default: the config's erf.tap, output].
    #[arg(long, value_enum)]
    pub tap: Option<TapArg>,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output directory for erf_map.lkdt, erf_heat.ppm, erf_ratio.csv and
    /// erf_meta.json.
    #[arg(long, value_name = "DIR", default_value = "erf")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run a single case [default: all cases].
    #[arg(long, value_name = "NAME")]
    pub op: Option<String>,
    /// Number of seeds per case (seeds 0..N).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// List case names and exit.
    #[arg(long)]
    pub list: bool,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run(
    args: impl IntoIterator<Item = String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = e.render().to_string();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{shown}");
                return EXIT_OK;
            }
            let _ = write!(err, "{shown}");
            let first = shown.lines().next().unwrap_or("usage error");
            let _ = writeln!(err, "{}", error_line("usage", EXIT_USAGE, first));
            return EXIT_USAGE;
        }
    };
    match commands::dispatch(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = e.to_string();
            let _ = writeln!(err, "lkd: error: {msg}");
            let _ = writeln!(err, "{}", error_line(e.kind(), e.code(), &msg));
            e.code()
        }
    }
}
