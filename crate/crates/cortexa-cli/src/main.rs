//! `cortexa` — batch pipeline driver.
//!
//! Machine-readable JSON goes to stdout; progress and prose go to stderr.
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure (diverged loss, non-finite values).

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use cortexa::engine::EngineError;
use cortexa::nifti::NiftiError;
use cortexa::pipeline::PipelineError;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "cortexa", version, about = "Brain-age pipeline: synthesize, preprocess, train, predict, evaluate")]
struct Cli {
    /// Bound data-loading/processing parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

fn parse_grid(s: &str) -> Result<Vec<usize>, String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse::<usize>().map_err(|e| format!("bad grid '{s}': {e}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 || parts.contains(&0) {
        return Err(format!("grid must be three positive extents like 91x109x91, got '{s}'"));
    }
    Ok(parts)
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: volumes plus a split manifest.
    Synth {
        /// Number of subjects.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 55.0)]
        age_min: f64,
        #[arg(long, default_value_t = 96.0)]
        age_max: f64,
        /// Voxel grid, e.g. 91x109x91.
        #[arg(long, value_parser = parse_grid, default_value = "91x109x91")]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Gaussian intensity noise, in intensity units.
        #[arg(long, default_value_t = 5.0)]
        noise_sigma: f32,
    },
    /// Build the histogram-matching reference from train-split volumes.
    HistRef {
        #[arg(long)]
        manifest: PathBuf,
        /// Number of quantile levels.
        #[arg(long, default_value_t = 1000)]
        q: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram-match and min-max scale every volume in a manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Reference quantile table CSV (from hist-ref).
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON config on a preprocessed manifest.
    Train {
        /// Training config JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the config batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the config initial learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Predict one subject's age; JSON on stdout.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Preprocessed volume (.nii or .nii.gz).
        #[arg(long)]
        volume: PathBuf,
        /// Defaults to the volume's file stem.
        #[arg(long)]
        subject_id: Option<String>,
    },
    /// Evaluate a checkpoint on one manifest split and export report files.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// train, val, or test.
        #[arg(long)]
        split: cortexa::Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the metrics summary of an eval directory; JSON on stdout.
    Report {
        #[arg(long)]
        eval_dir: PathBuf,
    },
}

fn exit_code(err: &PipelineError) -> i32 {
    match err {
        PipelineError::DivergedLoss { .. } => 3,
        PipelineError::Nifti(NiftiError::NonFinite) => 3,
        PipelineError::Engine(EngineError::NonFinite) => 3,
        _ => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };

    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            eprintln!("error: could not size the worker pool: {e}");
            std::process::exit(1);
        }
    }

    if let Err(e) = commands::run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
