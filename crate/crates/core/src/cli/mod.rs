//! Command-line front end: `train`, `upsample`, `eval`, `sample-smog`,
//! `inspect`, `init` and `sample-mesh`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "smog",
    version,
    about = "Arbitrary-ratio point cloud upsampling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on paired patch directories.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path (overrides `model` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upsample a point cloud by an arbitrary ratio.
    Upsample {
        model: PathBuf,
        input: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Supplies `patch_size` and `coverage`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score predictions against ground truth (files or directories).
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// Mesh file, or a directory of meshes in directory mode.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the predicted mixture and samples drawn from it.
    SampleSmog {
        model: PathBuf,
        input: PathBuf,
        #[arg(short = 'm', long = "count")]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mixture parameter CSV.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Print a checkpoint's header and tensor summary.
    Inspect { model: PathBuf },
    /// Write a freshly initialised model.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample points uniformly from a mesh surface.
    SampleMesh {
        mesh: PathBuf,
        #[arg(short = 'n', long = "count")]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
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
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
