//! End-to-end fitting: quadrature, covariate design, standardization, the
//! penalized path with cross-validation and predicted intensity rasters.
//!
//! Also builds covariate stacks from a JSON manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandwidth::{
    default_segment_bandwidth, points_as_rows, select_bandwidth, values_as_rows, BandwidthReport,
    DEFAULT_K_MAX,
};
use crate::covariates::{
    benchmark_covariate, expand_interactions, standardize, CovariateStack, Standardization,
    ZoneCovariate,
};
use crate::error::{Error, Result};
use crate::geom::{PointPattern, Raster, Window};
use crate::io;
use crate::penfit::{
    cv_select, fit_path, lambda_path, predict_intensity, FitPath, PoissonProblem, SolverOptions,
    DEFAULT_ALPHA, DEFAULT_FOLDS, DEFAULT_PATH_LENGTH,
};
use crate::quadrature::{build_grid_scheme, DummyMode};
use crate::rng::derive_seed;
use crate::smoothing::{
    distance_raster, interpolate_intensity, pixel_count_density, segment_density, DistanceTarget,
    KernelSpec,
};

pub const DEFAULT_TILES_PER_SIDE: usize = 64;

const STREAM_DUMMIES: u64 = 1;
const STREAM_FOLDS: u64 = 2;
const STREAM_BENCHMARK: u64 = 3;
const STREAM_INTERPOLATION: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub tiles_per_side: usize,
    pub dummy_mode: DummyMode,
    pub alpha: f64,
    pub path_length: usize,
    /// `λ_min / λ_max`; `None` picks the size-dependent default.
    pub lambda_ratio: Option<f64>,
    pub folds: usize,
    pub seed: u64,
    pub interactions: bool,
    pub squares: bool,
    pub include_benchmark: bool,
    pub benchmark_k_max: usize,
    pub normalize_output: bool,
    /// Smooth fitted intensities at the events onto the grid.
    pub interpolate: bool,
    /// Interpolation bandwidth; defaults to the benchmark bandwidth.
    pub interpolation_bandwidth: Option<f64>,
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let opts = SolverOptions::default();
        Self {
            tiles_per_side: DEFAULT_TILES_PER_SIDE,
            dummy_mode: DummyMode::Systematic,
            alpha: DEFAULT_ALPHA,
            path_length: DEFAULT_PATH_LENGTH,
            lambda_ratio: None,
            folds: DEFAULT_FOLDS,
            seed: 0,
            interactions: false,
            squares: false,
            include_benchmark: false,
            benchmark_k_max: DEFAULT_K_MAX,
            normalize_output: false,
            interpolate: false,
            interpolation_bandwidth: None,
            tol: opts.tol,
            max_outer: opts.max_outer,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_per_side == 0 {
            return Err(Error::Config("tiles_per_side must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.path_length == 0 {
            return Err(Error::Config("path_length must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.squares && !self.interactions {
            return Err(Error::Config("squares requires interactions".into()));
        }
        if !(self.tol > 0.0) || self.max_outer == 0 {
            return Err(Error::Config(
                "tol must be positive and max_outer at least 1".into(),
            ));
        }
        if let Some(h) = self.interpolation_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!(
                    "interpolation bandwidth must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_outer: self.max_outer,
            ..SolverOptions::default()
        }
    }
}

/// Interpolated fitted intensities at the events.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation {
    pub bandwidth: f64,
    pub dense: Raster,
    pub sparse: Raster,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub path: FitPath,
    pub standardization: Standardization,
    pub n_events: usize,
    pub n_dummies: usize,
    pub tile_area: f64,
    pub benchmark: Option<BandwidthReport>,
    /// Predicted intensity at λ_opt.
    pub dense: Raster,
    /// Predicted intensity at λ_1se.
    pub sparse: Raster,
    pub interpolation: Option<Interpolation>,
}

impl FitOutcome {
    pub fn index_opt(&self) -> usize {
        self.path.cv.as_ref().map(|c| c.index_opt).unwrap_or(0)
    }

    pub fn index_1se(&self) -> usize {
        self.path.cv.as_ref().map(|c| c.index_1se).unwrap_or(0)
    }
}

/// Fits the full pipeline for pattern `x` in window `w`. `grid` is the
/// output raster template (cells outside the window are nodata).
pub fn fit_pattern(
    x: &PointPattern,
    w: &Window,
    stack: &CovariateStack,
    grid: &Raster,
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::Input("point pattern is empty".into()));
    }
    let mut base = stack.clone();
    let mut benchmark = None;
    if cfg.include_benchmark {
        let (raster, report) = benchmark_covariate(
            x,
            w,
            grid,
            cfg.benchmark_k_max,
            derive_seed(cfg.seed, STREAM_BENCHMARK),
        )?;
        base.push_raster("benchmark", raster)?;
        benchmark = Some(report);
    }
    if base.is_empty() {
        return Err(Error::Config("no covariates to fit".into()));
    }
    let full = if cfg.interactions {
        expand_interactions(&base, cfg.squares)?
    } else {
        base
    };

    let q = build_grid_scheme(
        x,
        w,
        cfg.tiles_per_side,
        cfg.dummy_mode,
        derive_seed(cfg.seed, STREAM_DUMMIES),
    )?;
    let raw = full.eval_at(q.points())?;
    let (design, st) = standardize(&raw, q.weights())?;
    let problem = PoissonProblem::from_scheme(&q, &design)?;
    let opts = cfg.solver_options();
    let lambdas = lambda_path(&problem, cfg.alpha, cfg.path_length, cfg.lambda_ratio)?;
    let mut path = fit_path(&problem, cfg.alpha, &lambdas, &opts, Some(&st))?;
    let cv = cv_select(
        &problem,
        q.is_event(),
        cfg.alpha,
        &lambdas,
        cfg.folds,
        derive_seed(cfg.seed, STREAM_FOLDS),
        &opts,
    )?;
    path.attach_cv(cv)?;
    let (i_opt, i_1se) = path
        .cv
        .as_ref()
        .map(|c| (c.index_opt, c.index_1se))
        .unwrap_or((0, 0));

    let predict = |i: usize| {
        let (b0, b) = path.coefficients(i);
        predict_intensity(b0, b, &full, grid, cfg.normalize_output)
    };
    let dense = predict(i_opt)?;
    let sparse = predict(i_1se)?;

    let interpolation = if cfg.interpolate {
        let h = match (cfg.interpolation_bandwidth, &benchmark) {
            (Some(h), _) => h,
            (None, Some(r)) => r.h,
            (None, None) => {
                let k_max = cfg.benchmark_k_max.min(x.len().saturating_sub(1)).max(2);
                select_bandwidth(
                    &points_as_rows(x.points()),
                    k_max,
                    derive_seed(cfg.seed, STREAM_INTERPOLATION),
                )?
                .h
            }
        };
        let spec = KernelSpec::new(h)?;
        let events = full.eval_at(x.points())?;
        let at_events = |i: usize| -> Result<Raster> {
            let (b0, b) = path.coefficients(i);
            let marks: Vec<f64> = events
                .linear_predictor(b0, b)
                .into_iter()
                .map(|e| {
                    e.clamp(-crate::quadrature::ETA_CLAMP, crate::quadrature::ETA_CLAMP)
                        .exp()
                })
                .collect();
            let r = interpolate_intensity(x.points(), &marks, w, spec, grid)?;
            Ok(if cfg.normalize_output {
                r.normalized()
            } else {
                r
            })
        };
        Some(Interpolation {
            bandwidth: h,
            dense: at_events(i_opt)?,
            sparse: at_events(i_1se)?,
        })
    } else {
        None
    };

    Ok(FitOutcome {
        path,
        standardization: st,
        n_events: q.n_events(),
        n_dummies: q.n_dummies(),
        tile_area: q.tile_area(),
        benchmark,
        dense,
        sparse,
        interpolation,
    })
}

/// Coefficient table with one row per covariate and columns for the dense
/// (λ_opt) and sparse (λ_1se) models. Zero coefficients are written as `0`.
pub fn write_coefficient_table<W: std::io::Write>(out: W, outcome: &FitOutcome) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["covariate", "dense", "sparse"])?;
    let dense = &outcome.path.coefs[outcome.index_opt()];
    let sparse = &outcome.path.coefs[outcome.index_1se()];
    let names = std::iter::once("(intercept)").chain(outcome.path.names.iter().map(String::as_str));
    for (k, name) in names.enumerate() {
        wtr.write_record([
            name.to_string(),
            dense[k].to_string(),
            sparse[k].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Bandwidth for smoothed covariates in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthChoice {
    Value(f64),
    /// `"heuristic"` (K-means selector) or `"default"` (0.1 × window diameter).
    Named(String),
}

fn default_x() -> String {
    "x".into()
}

fn default_y() -> String {
    "y".into()
}

fn default_benchmark() -> String {
    "benchmark".into()
}

/// One covariate generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ManifestEntry {
    Raster {
        name: String,
        path: PathBuf,
    },
    Zones {
        name: String,
        polygons: PathBuf,
        values: PathBuf,
    },
    SegmentsDensity {
        name: String,
        path: PathBuf,
        #[serde(default)]
        bandwidth: Option<BandwidthChoice>,
    },
    SegmentsDistance {
        name: String,
        path: PathBuf,
    },
    PointsDensity {
        name: String,
        path: PathBuf,
        #[serde(default)]
        bandwidth: Option<BandwidthChoice>,
    },
    PointsDistance {
        name: String,
        path: PathBuf,
    },
    Coordinate {
        #[serde(default = "default_x")]
        name_x: String,
        #[serde(default = "default_y")]
        name_y: String,
    },
    Benchmark {
        #[serde(default = "default_benchmark")]
        name: String,
        /// Pattern to smooth; defaults to the pattern being fitted.
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        k_max: Option<usize>,
    },
}

/// JSON covariate manifest: `{"covariates": [{"kind": ..., ...}, ...]}`.
/// Relative paths resolve against `base_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub covariates: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// How one manifest covariate was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateInfo {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(rename = "P0", skip_serializing_if = "Option::is_none")]
    pub p0: Option<usize>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("covariate manifest: {e}")))?;
        m.base_dir = base_dir.into();
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Builds the stack on `grid`. `pattern` feeds benchmark entries without
    /// their own path.
    pub fn build(
        &self,
        w: &Window,
        grid: &Raster,
        pattern: Option<&PointPattern>,
        seed: u64,
    ) -> Result<(CovariateStack, Vec<CovariateInfo>)> {
        let mut stack = CovariateStack::new();
        let mut info = Vec::new();
        for (i, entry) in self.covariates.iter().enumerate() {
            let seed = derive_seed(seed, 100 + i as u64);
            match entry {
                ManifestEntry::Raster { name, path } => {
                    let r = io::load_raster(self.resolve(path))?;
                    let r = if r.same_grid(grid) {
                        r
                    } else {
                        grid.from_fn_like(|k| {
                            grid.is_defined(k)
                                .then(|| r.value_at(grid.center_of(k)))
                                .flatten()
                        })
                    };
                    stack.push_raster(name, r)?;
                    info.push(CovariateInfo::plain(name, "raster"));
                }
                ManifestEntry::Zones {
                    name,
                    polygons,
                    values,
                } => {
                    let z = ZoneCovariate::read(
                        std::fs::File::open(self.resolve(polygons))?,
                        std::fs::File::open(self.resolve(values))?,
                    )?;
                    stack.push_zones(name, z)?;
                    info.push(CovariateInfo::plain(name, "zones"));
                }
                ManifestEntry::SegmentsDensity {
                    name,
                    path,
                    bandwidth,
                } => {
                    let lines = io::load_segments(self.resolve(path))?;
                    let (h, p0) = match bandwidth {
                        None => heuristic(&values_as_rows(&lines.lengths()), seed)?,
                        Some(c) => {
                            choose(c, w, || heuristic(&values_as_rows(&lines.lengths()), seed))?
                        }
                    };
                    stack
                        .push_raster(name, segment_density(&lines, w, KernelSpec::new(h)?, grid))?;
                    info.push(CovariateInfo::smoothed(name, "segments-density", h, p0));
                }
                ManifestEntry::SegmentsDistance { name, path } => {
                    let lines = io::load_segments(self.resolve(path))?;
                    stack.push_raster(
                        name,
                        distance_raster(DistanceTarget::Segments(&lines), grid)?,
                    )?;
                    info.push(CovariateInfo::plain(name, "segments-distance"));
                }
                ManifestEntry::PointsDensity {
                    name,
                    path,
                    bandwidth,
                } => {
                    let pts = io::load_points(self.resolve(path))?;
                    let (h, p0) = match bandwidth {
                        None => heuristic(&points_as_rows(pts.points()), seed)?,
                        Some(c) => choose(c, w, || heuristic(&points_as_rows(pts.points()), seed))?,
                    };
                    stack
                        .push_raster(name, pixel_count_density(&pts, grid, KernelSpec::new(h)?))?;
                    info.push(CovariateInfo::smoothed(name, "points-density", h, p0));
                }
                ManifestEntry::PointsDistance { name, path } => {
                    let pts = io::load_points(self.resolve(path))?;
                    stack
                        .push_raster(name, distance_raster(DistanceTarget::Points(&pts), grid)?)?;
                    info.push(CovariateInfo::plain(name, "points-distance"));
                }
                ManifestEntry::Coordinate { name_x, name_y } => {
                    stack.push_coordinates(name_x, name_y)?;
                    info.push(CovariateInfo::plain(name_x, "coordinate"));
                    info.push(CovariateInfo::plain(name_y, "coordinate"));
                }
                ManifestEntry::Benchmark { name, path, k_max } => {
                    let owned;
                    let x = match path {
                        Some(p) => {
                            owned = io::load_points(self.resolve(p))?;
                            &owned
                        }
                        None => pattern.ok_or_else(|| {
                            Error::Config(format!("benchmark covariate '{name}' needs a pattern"))
                        })?,
                    };
                    let (r, report) =
                        benchmark_covariate(x, w, grid, k_max.unwrap_or(DEFAULT_K_MAX), seed)?;
                    stack.push_raster(name, r)?;
                    info.push(CovariateInfo::smoothed(
                        name,
                        "benchmark",
                        report.h,
                        Some(report.p0),
                    ));
                }
            }
        }
        Ok((stack, info))
    }
}

impl CovariateInfo {
    fn plain(name: &str, kind: &str) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            bandwidth: None,
            p0: None,
        }
    }

    fn smoothed(name: &str, kind: &str, h: f64, p0: Option<usize>) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            bandwidth: Some(h),
            p0,
        }
    }
}

fn heuristic(data: &[Vec<f64>], seed: u64) -> Result<(f64, Option<usize>)> {
    let k_max = DEFAULT_K_MAX.min(data.len().saturating_sub(1)).max(2);
    let r = select_bandwidth(data, k_max, seed)?;
    Ok((r.h, Some(r.p0)))
}

fn choose(
    c: &BandwidthChoice,
    w: &Window,
    heuristic: impl FnOnce() -> Result<(f64, Option<usize>)>,
) -> Result<(f64, Option<usize>)> {
    match c {
        BandwidthChoice::Value(h) => Ok((*h, None)),
        BandwidthChoice::Named(s) if s == "heuristic" => heuristic(),
        BandwidthChoice::Named(s) if s == "default" => Ok((default_segment_bandwidth(w), None)),
        BandwidthChoice::Named(s) => Err(Error::Config(format!(
            "bandwidth must be a number, \"heuristic\" or \"default\", got \"{s}\""
        ))),
    }
}

/// One raster per stack column on `grid` (nodata outside the grid mask or
/// where the covariate is undefined).
pub fn stack_rasters(stack: &CovariateStack, grid: &Raster) -> Vec<(String, Raster)> {
    let cols = stack.eval_grid(grid);
    stack
        .names()
        .into_iter()
        .zip(cols)
        .map(|(name, col)| {
            let r = grid.from_fn_like(|i| if grid.is_defined(i) { col[i] } else { None });
            (name, r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{rasterize, Point};

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            squares: true,
            ..FitConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = FitConfig {
            folds: 1,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_defaults_fill_missing_fields() {
        let c: FitConfig = serde_json::from_str(r#"{"alpha": 1.0}"#).unwrap();
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.folds, DEFAULT_FOLDS);
        assert!(serde_json::from_str::<FitConfig>(r#"{"alpah": 1.0}"#).is_err());
    }

    #[test]
    fn manifest_unknown_kind_is_config_error() {
        let e = Manifest::parse(r#"{"covariates":[{"kind":"elevation","name":"e"}]}"#, ".")
            .unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn manifest_coordinate_and_bandwidth_choice() {
        let m = Manifest::parse(
            r#"{"covariates":[{"kind":"coordinate"},{"kind":"segments-density","name":"r","path":"r.csv","bandwidth":"default"}]}"#,
            "/tmp",
        )
        .unwrap();
        assert_eq!(m.covariates.len(), 2);
        let w = Window::rectangle(0.0, 0.0, 30.0, 40.0).unwrap();
        let (h, p0) = choose(
            &BandwidthChoice::Named("default".into()),
            &w,
            || unreachable!(),
        )
        .unwrap();
        assert_eq!((h, p0), (5.0, None));
        assert!(choose(
            &BandwidthChoice::Named("silverman".into()),
            &w,
            || unreachable!()
        )
        .is_err());
    }

    #[test]
    fn coordinate_stack_rasters() {
        let w = Window::unit_square();
        let grid = rasterize(&w, 0.25).unwrap();
        let m = Manifest::parse(
            r#"{"covariates":[{"kind":"coordinate","name_x":"east","name_y":"north"}]}"#,
            ".",
        )
        .unwrap();
        let (stack, info) = m.build(&w, &grid, None, 0).unwrap();
        assert_eq!(info.len(), 2);
        let rs = stack_rasters(&stack, &grid);
        assert_eq!(rs[0].0, "east");
        assert_eq!(rs[0].1.get(0, 0), Some(0.125));
        assert_eq!(rs[1].1.get(0, 0), Some(0.875));
    }

    #[test]
    fn benchmark_without_pattern_is_config_error() {
        let w = Window::unit_square();
        let grid = rasterize(&w, 0.25).unwrap();
        let m = Manifest::parse(r#"{"covariates":[{"kind":"benchmark"}]}"#, ".").unwrap();
        assert!(matches!(m.build(&w, &grid, None, 0), Err(Error::Config(_))));
    }

    #[test]
    fn small_end_to_end_fit() {
        let w = Window::unit_square();
        let grid = rasterize(&w, 0.05).unwrap();
        let pts: Vec<Point> = (0..200)
            .map(|i| {
                let t = (i as f64 * 0.618_033_988_7).fract();
                let s = (i as f64 * 0.414_213_562_3).fract();
                Point::new(t.sqrt(), s)
            })
            .collect();
        let x = PointPattern::new(pts).unwrap();
        let mut stack = CovariateStack::new();
        stack.push_coordinates("x", "y").unwrap();
        let cfg = FitConfig {
            tiles_per_side: 16,
            path_length: 20,
            folds: 4,
            ..FitConfig::default()
        };
        let out = fit_pattern(&x, &w, &stack, &grid, &cfg).unwrap();
        assert_eq!(out.n_events, 200);
        let (_, beta) = out.path.coefficients(out.index_opt());
        assert!(beta[0] > 0.0, "density increases with x");
        assert!(out.index_1se() <= out.index_opt());
        assert_eq!(out.dense.defined_count(), grid.defined_count());
        let mut buf = Vec::new();
        write_coefficient_table(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("covariate,dense,sparse\n(intercept),"));
        assert_eq!(out, fit_pattern(&x, &w, &stack, &grid, &cfg).unwrap());
    }
}
