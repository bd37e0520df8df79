//! `maol` command-line interface.
//!
//! Exit codes: 0 on success, 1 when arguments or inputs fail validation
//! (nothing is written in that case), 2 when the computation itself fails.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{parse_dims, parse_index, parse_shapes, RunConfig, ShapeList};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "maol",
    version,
    about = "Separable analysis operator learning and volumetric reconstruction"
)]
struct Cli {
    /// TOML run file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic piecewise-smooth phantom volume.
    Gen(GenArgs),
    /// Build a training set from a volume and learn separable factors.
    Learn(LearnArgs),
    /// Denoise a volume with a learned operator.
    Denoise(DenoiseArgs),
    /// Simulate radially undersampled Fourier measurements and reconstruct.
    Cs(CsArgs),
    /// PSNR and MSSIM between two volumes.
    Eval(EvalArgs),
    /// Convert a headerless 8/16-bit raw grid into a volume file.
    Import(ImportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Volume size, e.g. 32,32,32.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LearnArgs {
    /// Volume the training patches are drawn from.
    #[arg(long)]
    train_vol: Option<PathBuf>,
    /// Patch size, e.g. 5,5,5.
    #[arg(long, value_parser = parse_dims)]
    patch: Option<[usize; 3]>,
    /// Factor shapes, e.g. 6x5,6x5,6x5.
    #[arg(long, value_parser = parse_shapes)]
    shape: Option<ShapeList>,
    /// Number of training patches.
    #[arg(long = "T", alias = "train-count")]
    train_count: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Seeds both patch sampling and factor initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Patches with standard deviation at or below this are rejected.
    #[arg(long)]
    flat_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Operator file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconFlags {
    /// Operator file from `learn`.
    #[arg(long)]
    op: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// ν of the sparsity penalty during reconstruction; defaults to the
    /// value recorded in the operator file.
    #[arg(long = "nu")]
    recon_nu: Option<f64>,
    #[arg(long = "max-iters")]
    recon_max_iters: Option<usize>,
    #[arg(long = "grad-tol")]
    recon_grad_tol: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Write metric rows as CSV to this file (`-` for stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Noise standard deviation. Noise with this level is added to the
    /// input unless `--noisy-input` is given.
    #[arg(long)]
    sigma: Option<f64>,
    /// The input already contains the noise; only use sigma for λ.
    #[arg(long)]
    noisy_input: bool,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Clean reference for PSNR/MSSIM reporting.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    recon: ReconFlags,
}

#[derive(Debug, Args)]
struct CsArgs {
    /// Fully sampled volume the measurements are simulated from.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Target sampling rate of the radial mask, in (0, 1].
    #[arg(long)]
    rate: Option<f64>,
    /// Use this mask file instead of building one from `--rate`.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Reference for metrics; defaults to the input.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mask_out: Option<PathBuf>,
    #[arg(long)]
    zero_filled_out: Option<PathBuf>,
    #[arg(long)]
    meas_out: Option<PathBuf>,
    #[command(flatten)]
    recon: ReconFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Row label in the output.
    #[arg(long, default_value = "test")]
    label: String,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleArg {
    U8,
    U16le,
    U16be,
}

#[derive(Debug, Args)]
struct ImportArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long, value_parser = parse_dims)]
    dims: [usize; 3],
    #[arg(long, value_enum)]
    sample: SampleArg,
    /// Stretch intensities linearly onto [0, 255].
    #[arg(long)]
    rescale: bool,
    /// Keep only the block starting at this voxel (needs --crop-dims).
    #[arg(long, value_parser = parse_index, requires = "crop_dims")]
    crop_start: Option<[usize; 3]>,
    /// Size of the kept block.
    #[arg(long, value_parser = parse_dims)]
    crop_dims: Option<[usize; 3]>,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Gen(a) => commands::gen(a, &cfg),
        Command::Learn(a) => commands::learn(a, &cfg),
        Command::Denoise(a) => commands::denoise(a, &cfg),
        Command::Cs(a) => commands::cs(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Import(a) => commands::import(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
