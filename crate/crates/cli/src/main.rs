//! `swreg`: phantom generation, training, evaluation, atlas building and
//! self-checks for semi-weakly-supervised registration.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 I/O,
//! 5 malformed file, 6 data or numerical error, 7 failed checks.

mod commands;
mod error;
mod manifest;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use swreg_core::checks::Suite;

use crate::commands::Subset;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "swreg",
    version,
    about = "Semi-weakly-supervised deformable registration on synthetic phantoms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a phantom dataset with a train/test split.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a student/teacher pair on the training subjects.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score the student on all ordered test pairs (per-class Dice and HD95).
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an atlas and probability maps with the teacher.
    Atlas {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        #[arg(long, default_value_t = 3)]
        max_iters: usize,
        /// Stop when the mean absolute atlas change falls below this
        /// fraction of the intensity range.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Population diversity and top/bottom cohort ratio from an atlas run.
    Diversity {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of a previous `atlas` run.
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        /// Defaults to the gland class recorded with the dataset.
        #[arg(long)]
        gland_class: Option<usize>,
    },
    /// Run identity, oracle and gradient self-checks.
    Check {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        /// Also write checks.csv and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an axial slice of a grid file as an 8-bit PGM image.
    RenderSlice {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Slice index; defaults to the middle slice.
        #[arg(long)]
        z: Option<usize>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    All,
    Compose,
    Augment,
    Metrics,
    Gradient,
    Atlas,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::All => Suite::All,
            SuiteArg::Compose => Suite::Compose,
            SuiteArg::Augment => Suite::Augment,
            SuiteArg::Metrics => Suite::Metrics,
            SuiteArg::Gradient => Suite::Gradient,
            SuiteArg::Atlas => Suite::Atlas,
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SWREG_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "SWREG_THREADS must be a positive integer, got {value:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size worker pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData { config, out, seed } => commands::gen_data(&config, &out, seed),
        Command::Train {
            config,
            data,
            out,
            seed,
        } => commands::train_cmd(&config, &data, &out, seed),
        Command::Evaluate { ckpt, data, out } => commands::evaluate_cmd(&ckpt, &data, &out),
        Command::Atlas {
            ckpt,
            data,
            out,
            subset,
            max_iters,
            tol,
        } => commands::atlas_cmd(&ckpt, &data, &out, subset, max_iters, tol),
        Command::Diversity {
            data,
            atlas,
            out,
            fraction,
            gland_class,
        } => commands::diversity_cmd(&data, &atlas, &out, fraction, gland_class),
        Command::Check { suite, out } => commands::check_cmd(suite.into(), out.as_deref()),
        Command::RenderSlice {
            input,
            out,
            z,
            channel,
        } => commands::render_slice_cmd(&input, &out, z, channel),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
