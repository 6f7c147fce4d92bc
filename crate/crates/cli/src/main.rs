//! `fmnet`: preprocess shapes, train the descriptor network, infer and
//! refine correspondences, evaluate them and export colour transfers.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fmnet", version, about = "Unsupervised dense shape correspondence")]
pub struct Cli {
    /// seed for every random choice (network init, pair sampling)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads; defaults to all cores
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// key=value file; flags take precedence over it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

/// Parameters that determine a preprocessed bundle.
#[derive(Debug, Args, Clone, Default)]
pub struct PrepArgs {
    /// bundle cache directory
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// remeshing target vertex count
    #[arg(long)]
    pub target_n: Option<usize>,
    /// number of Laplace–Beltrami eigenfunctions to cache
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub shot_bins: Option<usize>,
    /// SHOT support radius as a fraction of the geodesic diameter
    #[arg(long)]
    pub shot_radius_fraction: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remesh and compute bases, distances and descriptors for a manifest.
    Preprocess {
        manifest: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Train the descriptor network on the shapes of a manifest.
    Train(TrainArgs),
    /// Predict a correspondence X → Y with a trained network.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        x: PathBuf,
        y: PathBuf,
        /// correspondence file to write
        #[arg(long, short)]
        out: PathBuf,
        /// also write the dense soft map
        #[arg(long)]
        soft_dump: Option<PathBuf>,
        #[arg(long)]
        precision: Option<String>,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Refine a correspondence with PMF, optionally upscaling to the
    /// original meshes.
    Refine {
        x: PathBuf,
        y: PathBuf,
        /// initial correspondence file
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        init: Option<PathBuf>,
        /// predict the initial map with this network instead
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        pmf_iters: Option<usize>,
        /// write a map between the original (unremeshed) meshes here
        #[arg(long)]
        upscale: Option<PathBuf>,
        #[arg(long)]
        irls_iters: Option<usize>,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Geodesic error of a correspondence against ground truth.
    Eval {
        /// correspondence file to score
        #[arg(long)]
        pred: PathBuf,
        /// `identity` or a ground-truth file over the same vertices
        #[arg(long)]
        gt: String,
        /// target mesh of the correspondence
        y: PathBuf,
        /// curve CSV (a `.meta.json` sidecar is written next to it)
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// diameter, sqrt_area or none
        #[arg(long)]
        normalization: Option<String>,
        #[arg(long)]
        curve_points: Option<usize>,
        #[arg(long)]
        curve_max: Option<f64>,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Colour X by position and transfer the colours to Y.
    ExportColors {
        x: PathBuf,
        y: PathBuf,
        #[arg(long)]
        corr: PathBuf,
        /// directory receiving source.ply and target.ply
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    /// directory receiving checkpoint.bin and log.csv
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_pairs: Option<usize>,
    /// unsupervised or supervised
    #[arg(long)]
    pub mode: Option<String>,
    /// f32 or f64
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub ridge_scale: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// record the supervised loss when ground truth exists
    #[arg(long)]
    pub log_supervised: Option<bool>,
    #[command(flatten)]
    pub prep: PrepArgs,
}

fn run() -> CliResult<()> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                std::process::exit(if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 });
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return Err(CliError::usage(first.to_string()));
        }
    };
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads: usize = file.resolve(cli.threads, "threads", 0)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot configure {threads} threads: {e}")))?;
    }
    let seed: u64 = file.resolve(cli.seed, "seed", 0)?;
    commands::dispatch(cli.command, &file, seed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
