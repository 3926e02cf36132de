//! `ppfit` command-line front-end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "ppfit",
    version,
    about = "Elastic-net Poisson intensity fitting for point patterns"
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    window: Option<PathBuf>,
    /// JSON covariate manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output grid cell size.
    #[arg(long)]
    cell: Option<f64>,
    /// Keep only events whose mark equals VALUE (or NAME=VALUE).
    #[arg(long)]
    mark_filter: Option<String>,
    #[arg(long)]
    tiles_per_side: Option<usize>,
    /// `systematic` or `random` dummy placement.
    #[arg(long)]
    dummy_mode: Option<ppfit::quadrature::DummyMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    path_length: Option<usize>,
    #[arg(long)]
    lambda_ratio: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Master seed (default from PPFIT_SEED, else 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    interactions: bool,
    #[arg(long)]
    squares: bool,
    #[arg(long)]
    include_benchmark: bool,
    #[arg(long)]
    benchmark_k_max: Option<usize>,
    /// Min-max scale predicted rasters to [0, 1].
    #[arg(long)]
    normalize_output: bool,
    /// Also smooth fitted intensities at the events onto the grid.
    #[arg(long)]
    interpolate: bool,
    #[arg(long)]
    interpolation_bandwidth: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the penalized path, cross-validate and predict dense/sparse rasters.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Heuristic K-means bandwidth for a point pattern or segment lengths.
    Bandwidth {
        #[arg(
            long,
            conflicts_with = "segments",
            required_unless_present = "segments"
        )]
        pattern: Option<PathBuf>,
        /// Use the lengths of these segments as 1-d observations.
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long, default_value_t = ppfit::bandwidth::DEFAULT_K_MAX)]
        k_max: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Write bandwidth.json here instead of printing it.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Build every manifest covariate as an ASCII grid.
    Covariates {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        window: PathBuf,
        #[arg(long)]
        cell: Option<f64>,
        /// Pattern for benchmark entries without their own path.
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate a Poisson pattern by thinning.
    Simulate {
        #[arg(long)]
        window: PathBuf,
        /// Constant intensity.
        #[arg(
            long,
            conflicts_with = "rho_raster",
            required_unless_present = "rho_raster"
        )]
        rho_const: Option<f64>,
        /// Intensity raster (ASCII grid).
        #[arg(long)]
        rho_raster: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Undersampling stability of the dense and sparse fits.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        eval_seed: Option<u64>,
        /// Compare raw intensities instead of [0, 1]-scaled ones.
        #[arg(long)]
        raw_scale: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Random train/test split of a pattern.
    Split {
        #[arg(long)]
        pattern: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn exit_code(e: &ppfit::Error) -> u8 {
    use ppfit::Error::*;
    match e {
        Parse(_) | Csv(_) | Json(_) | Io(_) | Input(_) | InvalidWindow(_) => 2,
        Numerical(_) | Domain(_) => 3,
        Config(_) | InvalidResolution(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(4);
        }
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    let result = match cli.command {
        Command::Fit { run, out_dir } => commands::fit(&run, &out_dir),
        Command::Bandwidth {
            pattern,
            segments,
            k_max,
            seed,
            out_dir,
        } => commands::bandwidth(
            pattern.as_deref(),
            segments.as_deref(),
            k_max,
            seed,
            out_dir.as_deref(),
        ),
        Command::Covariates {
            manifest,
            window,
            cell,
            pattern,
            seed,
            out_dir,
        } => commands::covariates(&manifest, &window, cell, pattern.as_deref(), seed, &out_dir),
        Command::Simulate {
            window,
            rho_const,
            rho_raster,
            seed,
            out_dir,
        } => commands::simulate(&window, rho_const, rho_raster.as_deref(), seed, &out_dir),
        Command::Eval {
            run,
            replicates,
            fraction,
            eval_seed,
            raw_scale,
            out_dir,
        } => commands::eval(&run, replicates, fraction, eval_seed, raw_scale, &out_dir),
        Command::Split {
            pattern,
            fraction,
            seed,
            out_dir,
        } => commands::split(&pattern, fraction, seed, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
