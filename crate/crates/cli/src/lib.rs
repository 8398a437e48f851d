//! `diffsumm` command line: synthesize data, train, sample, evaluate, sweep the
//! noise horizon, and dump schedules.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "diffsumm", version, about = "Diffusion-based video summarization")]
pub struct Cli {
    /// Worker threads for per-video work (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by commands that read a run config.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// `key = value` config file with dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed (falls back to the config, then DIFFSUMM_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-annotator dataset.
    Synth {
        /// `key = value` spec file (keys as in `synth.*`, prefix optional).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a noise predictor on one split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Extra datasets: added to training (augmented) or used as the source (transfer, fpv).
        #[arg(long = "aux")]
        aux: Vec<PathBuf>,
        #[arg(long)]
        split_setting: Option<String>,
        #[arg(long)]
        split_index: Option<usize>,
        /// Visit videos in split order every epoch.
        #[arg(long)]
        no_shuffle: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate scores for every video of a dataset.
    Sample {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint; may be omitted only with `--t-active 0`.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Scorer as `kind[:args]`, e.g. `constant:0.5`, `repdiv`, `oracle:0`, `file:DIR`.
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        t_active: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate checkpoints on test splits, next to the scorer alone.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "aux")]
        aux: Vec<PathBuf>,
        /// One checkpoint for all splits, or one per split in split order.
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        scorer: Option<String>,
        /// F-score protocol: `max` or `avg`.
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        split_setting: Option<String>,
        #[arg(long)]
        t_active: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Metrics as a function of the noise horizon.
    SweepT {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated horizons, e.g. `50,100,200,500,1000`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Evaluate this checkpoint at every horizon instead of training one model per value.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        split_setting: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the noise schedule table.
    Schedule {
        #[arg(long, default_value_t = 1000)]
        t_base: usize,
        #[arg(long)]
        t_active: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        beta_start: f64,
        #[arg(long, default_value_t = 0.02)]
        beta_end: f64,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a converted dataset directory, optionally running the converter first.
    Convert {
        /// Dataset directory to validate (the converter's output directory).
        #[arg(long)]
        check: Option<PathBuf>,
        /// Source archive for the external converter.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tvsum_anno: Option<PathBuf>,
        /// Converter executable (default: `$DIFFSUMM_CONVERTER` or `diffsumm-convert`).
        #[arg(long)]
        converter: Option<String>,
    },
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the process exit code: 0 success, 1 usage or validation error, 2 runtime error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_VALIDATION;
        }
        // Fails only if the global pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
