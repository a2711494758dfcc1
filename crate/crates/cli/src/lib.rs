//! `rgbdgan`: toy data, training, sampling, sweeps, interpolation, metrics, point clouds
//! and depth prediction, each writing into its own run directory.

pub mod commands;
pub mod config;
pub mod run_dir;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rgbd_gan::error::Error;

pub use config::{Preset, RunConfig, KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rgbdgan", version, about = "Angle-controlled RGB-D image generation", after_help = keys_help())]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

fn keys_help() -> String {
    format!(
        "Configuration keys (defaults are the 64-desk preset; a preset replaces them, a config file \
         overrides the preset, --set overrides the file):\n{}",
        RunConfig::describe_keys()
    )
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.batch=4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_override)]
    pub set: Vec<(String, String)>,
    /// Run directory (default: a fresh directory under $RGBDGAN_RUN_ROOT, or ./runs).
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Replace a non-empty run directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Checkpoint file, checkpoint directory or run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seed for latent codes (default: metrics.seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural RGB-D dataset.
    MakeToyData {
        #[command(flatten)]
        common: Common,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        angles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (sets data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Total steps (sets train.steps).
        #[arg(long)]
        steps: Option<u64>,
        /// Sets train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint; its run directory is reused unless --run is given.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write generated RGB-D samples.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Fixed angle in degrees (default: uniform over the trained range).
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
    },
    /// Render one scene at several angles.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Comma-separated angles in degrees.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',', default_value = "-15,-7.5,0,7.5,15")]
        angles: Vec<f64>,
    },
    /// Interpolate the depth or appearance code between two samples.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// depth or appearance.
        #[arg(long)]
        which: rgbd_eval::Interpolated,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        /// Angle in degrees.
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        theta: f64,
    },
    /// RP, RC, DP(Real), DP(Fake) and the Fréchet distance, as JSON.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Held-out dataset directory (sets data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a coloured point cloud (ASCII PLY) of a generated sample or an RGB-D pair.
    ExportPointcloud {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to sample from.
        #[arg(long, conflicts_with_all = ["rgb", "depth"], required_unless_present = "rgb")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        theta: f64,
        /// RGB image of a pair (needs --depth).
        #[arg(long, requires = "depth")]
        rgb: Option<PathBuf>,
        /// 16-bit depth PNG spread over camera.near..camera.far.
        #[arg(long, requires = "rgb")]
        depth: Option<PathBuf>,
    },
    /// Run the discriminator's depth branch on an RGB image.
    PredictDepth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Error
    } else {
        match verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).try_init();
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match commands::dispatch(cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
