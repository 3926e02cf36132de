//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ppfit::bandwidth::{points_as_rows, select_bandwidth, values_as_rows};
use ppfit::covariates::CovariateStack;
use ppfit::geom::rasterize;
use ppfit::io;
use ppfit::pipeline::{fit_pattern, write_coefficient_table, CovariateInfo, Manifest};
use ppfit::sim_eval::{self, Intensity, StabilityOptions};
use ppfit::{Error, PointPattern, Raster, Result, Window};
use serde::Serialize;

use crate::config::{env_seed, RunConfig};
use crate::RunArgs;

const TOOL: &str = "ppfit";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a C,
    result: R,
}

fn write_report<C: Serialize, R: Serialize>(
    path: &Path,
    command: &'static str,
    config: &C,
    result: R,
) -> Result<()> {
    let report = Report {
        tool: TOOL,
        version: VERSION,
        command,
        config,
        result,
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Seed precedence: flag, then config file, then `PPFIT_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, from_file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(from_file) {
        return Ok(s);
    }
    Ok(env_seed()?.unwrap_or(0))
}

fn file_seed(path: &Path) -> Result<Option<u64>> {
    let text = fs::read_to_string(path)?;
    let v: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(v.get("fit")
        .and_then(|f| f.get("seed"))
        .and_then(|s| s.as_integer())
        .map(|s| s as u64))
}

pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let (mut c, from_file) = match &args.config {
        Some(p) => (RunConfig::load(p)?, file_seed(p)?),
        None => (RunConfig::default(), None),
    };
    if let Some(dir) = args.config.as_deref().and_then(Path::parent) {
        for p in [&mut c.pattern, &mut c.window, &mut c.manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v.into();
            }
        };
    }
    set!(c.pattern, args.pattern);
    set!(c.window, args.window);
    set!(c.manifest, args.manifest);
    set!(c.cell, args.cell);
    set!(c.mark_filter, args.mark_filter);
    set!(c.fit.tiles_per_side, args.tiles_per_side);
    set!(c.fit.dummy_mode, args.dummy_mode);
    set!(c.fit.alpha, args.alpha);
    set!(c.fit.path_length, args.path_length);
    set!(c.fit.lambda_ratio, args.lambda_ratio);
    set!(c.fit.folds, args.folds);
    set!(c.fit.benchmark_k_max, args.benchmark_k_max);
    set!(c.fit.interpolation_bandwidth, args.interpolation_bandwidth);
    c.fit.interactions |= args.interactions;
    c.fit.squares |= args.squares;
    c.fit.include_benchmark |= args.include_benchmark;
    c.fit.normalize_output |= args.normalize_output;
    c.fit.interpolate |= args.interpolate;
    c.fit.seed = resolve_seed(args.seed, from_file)?;
    c.fit.validate()?;
    Ok(c)
}

fn grid_for(w: &Window, cell: Option<f64>) -> Result<Raster> {
    let cell = cell.unwrap_or_else(|| w.width().max(w.height()) / 128.0);
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(Error::Config(format!(
            "cell size must be positive, got {cell}"
        )));
    }
    rasterize(w, cell)
}

struct Inputs {
    pattern: PointPattern,
    window: Window,
    grid: Raster,
    stack: CovariateStack,
    covariates: Vec<CovariateInfo>,
}

fn load_inputs(c: &RunConfig) -> Result<Inputs> {
    let mut pattern = io::load_points(c.require_pattern()?)?;
    if let Some(f) = &c.mark_filter {
        pattern = pattern.filter_mark(f)?;
        if pattern.is_empty() {
            return Err(Error::Input(format!("mark filter '{f}' leaves no events")));
        }
    }
    let window = io::load_window(c.require_window()?)?;
    pattern.check_inside(&window)?;
    let grid = grid_for(&window, c.cell)?;
    let (stack, covariates) = match &c.manifest {
        Some(m) => Manifest::load(m)?.build(&window, &grid, Some(&pattern), c.fit.seed)?,
        None => (CovariateStack::new(), Vec::new()),
    };
    Ok(Inputs {
        pattern,
        window,
        grid,
        stack,
        covariates,
    })
}

#[derive(Serialize)]
struct FitSummary<'a> {
    n_events: usize,
    n_dummies: usize,
    tiles_per_side: usize,
    tile_area: f64,
    /// λ is scaled by 1/m, so values compare only across fits with equal m.
    quadrature_rows: usize,
    covariates: &'a [CovariateInfo],
    standardization: &'a ppfit::covariates::Standardization,
    benchmark: Option<&'a ppfit::bandwidth::BandwidthReport>,
    interpolation_bandwidth: Option<f64>,
    lambda_opt: Option<f64>,
    lambda_1se: Option<f64>,
    path: &'a ppfit::penfit::FitPath,
}

pub fn fit(args: &RunArgs, out_dir: &Path) -> Result<()> {
    let c = resolve(args)?;
    let inp = load_inputs(&c)?;
    let out = fit_pattern(&inp.pattern, &inp.window, &inp.stack, &inp.grid, &c.fit)?;
    create_dir(out_dir)?;
    io::save_raster(out_dir.join("dense.asc"), &out.dense)?;
    io::save_raster(out_dir.join("sparse.asc"), &out.sparse)?;
    if let Some(i) = &out.interpolation {
        io::save_raster(out_dir.join("interpolated_dense.asc"), &i.dense)?;
        io::save_raster(out_dir.join("interpolated_sparse.asc"), &i.sparse)?;
    }
    write_coefficient_table(
        BufWriter::new(File::create(out_dir.join("coefficients.csv"))?),
        &out,
    )?;
    let summary = FitSummary {
        n_events: out.n_events,
        n_dummies: out.n_dummies,
        tiles_per_side: c.fit.tiles_per_side,
        tile_area: out.tile_area,
        quadrature_rows: out.n_events + out.n_dummies,
        covariates: &inp.covariates,
        standardization: &out.standardization,
        benchmark: out.benchmark.as_ref(),
        interpolation_bandwidth: out.interpolation.as_ref().map(|i| i.bandwidth),
        lambda_opt: out.path.lambda_opt(),
        lambda_1se: out.path.lambda_1se(),
        path: &out.path,
    };
    write_report(&out_dir.join("fit.json"), "fit", &c, summary)
}

#[derive(Serialize)]
struct BandwidthConfig<'a> {
    pattern: Option<&'a Path>,
    segments: Option<&'a Path>,
    k_max: usize,
    seed: u64,
}

pub fn bandwidth(
    pattern: Option<&Path>,
    segments: Option<&Path>,
    k_max: usize,
    seed: Option<u64>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let seed = resolve_seed(seed, None)?;
    let data = match (pattern, segments) {
        (Some(p), _) => points_as_rows(io::load_points(p)?.points()),
        (None, Some(s)) => values_as_rows(&io::load_segments(s)?.lengths()),
        (None, None) => return Err(Error::Config("give --pattern or --segments".into())),
    };
    let report = select_bandwidth(&data, k_max, seed)?;
    let cfg = BandwidthConfig {
        pattern,
        segments,
        k_max,
        seed,
    };
    match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            write_report(&dir.join("bandwidth.json"), "bandwidth", &cfg, &report)
        }
        None => {
            let report = Report {
                tool: TOOL,
                version: VERSION,
                command: "bandwidth",
                config: &cfg,
                result: &report,
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CovariatesConfig<'a> {
    manifest: &'a Path,
    window: &'a Path,
    cell: f64,
    pattern: Option<&'a Path>,
    seed: u64,
}

#[derive(Serialize)]
struct CovariatesResult<'a> {
    covariates: &'a [CovariateInfo],
    files: Vec<String>,
}

pub fn covariates(
    manifest: &Path,
    window: &Path,
    cell: Option<f64>,
    pattern: Option<&Path>,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let seed = resolve_seed(seed, None)?;
    let w = io::load_window(window)?;
    let grid = grid_for(&w, cell)?;
    let x = pattern.map(io::load_points).transpose()?;
    let (stack, info) = Manifest::load(manifest)?.build(&w, &grid, x.as_ref(), seed)?;
    create_dir(out_dir)?;
    let mut files = Vec::new();
    for (name, r) in ppfit::pipeline::stack_rasters(&stack, &grid) {
        let file = format!("{name}.asc");
        io::save_raster(out_dir.join(&file), &r)?;
        files.push(file);
    }
    let cfg = CovariatesConfig {
        manifest,
        window,
        cell: grid.cell(),
        pattern,
        seed,
    };
    write_report(
        &out_dir.join("covariates.json"),
        "covariates",
        &cfg,
        CovariatesResult {
            covariates: &info,
            files,
        },
    )
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    window: &'a Path,
    rho_const: Option<f64>,
    rho_raster: Option<&'a Path>,
    seed: u64,
}

#[derive(Serialize)]
struct CountResult {
    n: usize,
}

pub fn simulate(
    window: &Path,
    rho_const: Option<f64>,
    rho_raster: Option<&Path>,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let seed = resolve_seed(seed, None)?;
    let w = io::load_window(window)?;
    let raster = rho_raster.map(io::load_raster).transpose()?;
    let intensity = match (rho_const, &raster) {
        (Some(c), _) => Intensity::Constant(c),
        (None, Some(r)) => Intensity::Raster(r),
        (None, None) => return Err(Error::Config("give --rho-const or --rho-raster".into())),
    };
    let x = sim_eval::simulate_poisson(&intensity, &w, seed)?;
    create_dir(out_dir)?;
    io::save_points(out_dir.join("points.csv"), &x)?;
    let cfg = SimulateConfig {
        window,
        rho_const,
        rho_raster,
        seed,
    };
    write_report(
        &out_dir.join("simulate.json"),
        "simulate",
        &cfg,
        CountResult { n: x.len() },
    )
}

#[derive(Serialize)]
struct SplitConfig<'a> {
    pattern: &'a Path,
    fraction: f64,
    seed: u64,
}

#[derive(Serialize)]
struct SplitResult {
    train: usize,
    test: usize,
}

pub fn split(pattern: &Path, fraction: f64, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let seed = resolve_seed(seed, None)?;
    let x = io::load_points(pattern)?;
    let (train, test) = sim_eval::split_train_test(&x, fraction, seed)?;
    create_dir(out_dir)?;
    io::save_points(out_dir.join("train.csv"), &train)?;
    io::save_points(out_dir.join("test.csv"), &test)?;
    let cfg = SplitConfig {
        pattern,
        fraction,
        seed,
    };
    write_report(
        &out_dir.join("split.json"),
        "split",
        &cfg,
        SplitResult {
            train: train.len(),
            test: test.len(),
        },
    )
}

pub fn eval(
    args: &RunArgs,
    replicates: Option<usize>,
    fraction: Option<f64>,
    eval_seed: Option<u64>,
    raw_scale: bool,
    out_dir: &Path,
) -> Result<()> {
    let mut c = resolve(args)?;
    if let Some(r) = replicates {
        c.eval.replicates = r;
    }
    if let Some(f) = fraction {
        c.eval.fraction = f;
    }
    if eval_seed.is_some() {
        c.eval.seed = eval_seed;
    }
    c.eval.raw_scale |= raw_scale;
    let inp = load_inputs(&c)?;
    let opts = StabilityOptions {
        replicates: c.eval.replicates,
        fraction: c.eval.fraction,
        seed: c.eval.seed.unwrap_or(c.fit.seed),
        raw_scale: c.eval.raw_scale,
    };
    let report = sim_eval::stability_eval(
        &inp.pattern,
        &inp.window,
        &inp.stack,
        &inp.grid,
        &c.fit,
        &opts,
    )?;
    create_dir(out_dir)?;
    for (label, m) in [("dense", &report.dense), ("sparse", &report.sparse)] {
        io::save_raster(out_dir.join(format!("{label}_mae.asc")), &m.mae)?;
        io::save_raster(out_dir.join(format!("{label}_q05.asc")), &m.q05)?;
        io::save_raster(out_dir.join(format!("{label}_q95.asc")), &m.q95)?;
        let path: PathBuf = out_dir.join(format!("{label}_profile.csv"));
        sim_eval::write_profile_csv(BufWriter::new(File::create(path)?), m)?;
    }
    write_report(&out_dir.join("eval.json"), "eval", &c, &report)
}
