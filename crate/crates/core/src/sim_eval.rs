//! Poisson simulation by thinning, undersampling and train/test splits, and
//! the undersampling stability harness.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateStack;
use crate::error::{Error, Result};
use crate::geom::{Point, PointPattern, Raster, Window};
use crate::pipeline::{fit_pattern, FitConfig};
use crate::rng::{derive_seed, rng};

const STREAM_REPLICATES: u64 = 1 << 32;

/// Intensity surface for simulation.
pub enum Intensity<'a> {
    Constant(f64),
    /// Cell values; zero outside the defined cells.
    Raster(&'a Raster),
    /// Function with a known upper bound on the window.
    Function {
        rho: &'a (dyn Fn(Point) -> f64 + Sync),
        bound: f64,
    },
}

impl Intensity<'_> {
    fn bound(&self) -> Result<f64> {
        let b = match self {
            Intensity::Constant(c) => *c,
            Intensity::Raster(r) => r.min_max().map(|(_, hi)| hi).unwrap_or(0.0),
            Intensity::Function { bound, .. } => *bound,
        };
        if !(b >= 0.0) || !b.is_finite() {
            return Err(Error::Domain(format!(
                "intensity bound must be finite and non-negative, got {b}"
            )));
        }
        Ok(b)
    }

    fn at(&self, p: Point) -> f64 {
        match self {
            Intensity::Constant(c) => *c,
            Intensity::Raster(r) => r.value_at(p).unwrap_or(0.0),
            Intensity::Function { rho, .. } => rho(p),
        }
    }
}

/// Inhomogeneous Poisson pattern on `w` by thinning a homogeneous process
/// of rate `λ*` on the bounding box.
pub fn simulate_poisson(intensity: &Intensity<'_>, w: &Window, seed: u64) -> Result<PointPattern> {
    let lambda = intensity.bound()?;
    if lambda == 0.0 {
        return Ok(PointPattern::empty());
    }
    let (min, max) = w.bbox();
    let mean = lambda * w.width() * w.height();
    let mut r = rng(seed);
    let n = Poisson::new(mean)
        .map_err(|e| Error::Domain(format!("Poisson mean {mean}: {e}")))?
        .sample(&mut r) as usize;
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let p = Point::new(
            min.x + r.random::<f64>() * (max.x - min.x),
            min.y + r.random::<f64>() * (max.y - min.y),
        );
        let u: f64 = r.random();
        if w.contains(p) {
            let rho = intensity.at(p);
            if rho > lambda * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "intensity {rho} exceeds bound {lambda}"
                )));
            }
            if u * lambda < rho {
                pts.push(p);
            }
        }
    }
    PointPattern::new(pts)
}

fn check_fraction(fraction: f64, allow_one: bool) -> Result<()> {
    let ok = fraction > 0.0 && (fraction < 1.0 || (allow_one && fraction == 1.0));
    if !ok {
        return Err(Error::Config(format!("fraction out of range: {fraction}")));
    }
    Ok(())
}

/// Simple random sample of `round(fraction·n)` points without replacement,
/// kept in input order.
pub fn undersample(x: &PointPattern, fraction: f64, seed: u64) -> Result<PointPattern> {
    check_fraction(fraction, true)?;
    let n = x.len();
    let k = (fraction * n as f64).round() as usize;
    if k == n {
        return Ok(x.clone());
    }
    let mut idx = sample(&mut rng(seed), n, k).into_vec();
    idx.sort_unstable();
    Ok(x.subset(&idx))
}

/// Disjoint train/test partition with `round(fraction·n)` training points.
pub fn split_train_test(
    x: &PointPattern,
    fraction: f64,
    seed: u64,
) -> Result<(PointPattern, PointPattern)> {
    check_fraction(fraction, false)?;
    let n = x.len();
    let k = (fraction * n as f64).round() as usize;
    let mut idx = sample(&mut rng(seed), n, n).into_vec();
    let mut test = idx.split_off(k);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((x.subset(&idx), x.subset(&test)))
}

/// Type-7 (linear interpolation) empirical quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub replicates: usize,
    pub fraction: f64,
    pub seed: u64,
    /// Compare raw intensities instead of min-max normalized ones.
    pub raw_scale: bool,
}

/// Pixel-wise error summary for one model (dense or sparse).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelStability {
    #[serde(skip)]
    pub mae: Raster,
    #[serde(skip)]
    pub q05: Raster,
    #[serde(skip)]
    pub q95: Raster,
    pub mean_mae: f64,
    pub sd_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub replicates: usize,
    pub fraction: f64,
    pub seed: u64,
    pub raw_scale: bool,
    pub failed: usize,
    pub failures: Vec<String>,
    pub dense: ModelStability,
    pub sparse: ModelStability,
}

/// Refits the pipeline on `R` undersampled copies of `x` and summarizes the
/// pixel-wise absolute deviation from the full-data fit.
pub fn stability_eval(
    x: &PointPattern,
    w: &Window,
    stack: &CovariateStack,
    grid: &Raster,
    cfg: &FitConfig,
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    if opts.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    check_fraction(opts.fraction, true)?;
    let scale = |r: &Raster| {
        if opts.raw_scale {
            r.clone()
        } else {
            r.normalized()
        }
    };
    let reference = fit_pattern(x, w, stack, grid, cfg)?;
    let ref_dense = scale(&reference.dense);
    let ref_sparse = scale(&reference.sparse);
    let cells = ref_dense.defined_indices();

    let runs: Vec<Result<(Vec<f64>, Vec<f64>)>> = crate::par::map_range(opts.replicates, |r| {
        let sub = undersample(
            x,
            opts.fraction,
            derive_seed(derive_seed(opts.seed, STREAM_REPLICATES), r as u64),
        )?;
        let fit = fit_pattern(&sub, w, stack, grid, cfg)?;
        let diff = |est: &Raster, reference: &Raster| -> Result<Vec<f64>> {
            let est = scale(est);
            cells
                .iter()
                .map(|&i| {
                    if est.is_defined(i) {
                        Ok((est.values()[i] - reference.values()[i]).abs())
                    } else {
                        Err(Error::Numerical(format!(
                            "replicate estimate undefined at cell {i}"
                        )))
                    }
                })
                .collect()
        };
        Ok((
            diff(&fit.dense, &ref_dense)?,
            diff(&fit.sparse, &ref_sparse)?,
        ))
    });

    let mut dense_err = Vec::new();
    let mut sparse_err = Vec::new();
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok((d, s)) => {
                dense_err.push(d);
                sparse_err.push(s);
            }
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push(format!("replicate {r}: {e}"));
            }
        }
    }
    if dense_err.is_empty() {
        return Err(Error::Numerical(format!(
            "all {} replicates failed",
            opts.replicates
        )));
    }
    Ok(StabilityReport {
        replicates: opts.replicates,
        fraction: opts.fraction,
        seed: opts.seed,
        raw_scale: opts.raw_scale,
        failed: failures.len(),
        failures,
        dense: summarize(&dense_err, &cells, grid),
        sparse: summarize(&sparse_err, &cells, grid),
    })
}

fn summarize(errors: &[Vec<f64>], cells: &[usize], grid: &Raster) -> ModelStability {
    let r = errors.len() as f64;
    let mut mae = grid.filled_like(grid.nodata());
    let mut q05 = mae.clone();
    let mut q95 = mae.clone();
    let mut col = Vec::with_capacity(errors.len());
    for (c, &i) in cells.iter().enumerate() {
        col.clear();
        col.extend(errors.iter().map(|e| e[c]));
        let mean = col.iter().sum::<f64>() / r;
        col.sort_by(f64::total_cmp);
        mae.values_mut()[i] = mean;
        q05.values_mut()[i] = quantile_sorted(&col, 0.05);
        q95.values_mut()[i] = quantile_sorted(&col, 0.95);
    }
    let vals: Vec<f64> = cells.iter().map(|&i| mae.values()[i]).collect();
    let n = vals.len() as f64;
    let mean_mae = vals.iter().sum::<f64>() / n;
    let sd_mae = if vals.len() > 1 {
        (vals.iter().map(|v| (v - mean_mae).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    ModelStability {
        mae,
        q05,
        q95,
        mean_mae,
        sd_mae,
    }
}

/// Pixels sorted by MAE: rows `(rank fraction, mae, q05, q95)`.
pub fn profile_curve(m: &ModelStability) -> Vec<[f64; 4]> {
    let mut rows: Vec<[f64; 4]> = m
        .mae
        .defined_indices()
        .into_iter()
        .map(|i| [0.0, m.mae.values()[i], m.q05.values()[i], m.q95.values()[i]])
        .collect();
    rows.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let n = rows.len();
    for (k, row) in rows.iter_mut().enumerate() {
        row[0] = if n > 1 {
            k as f64 / (n - 1) as f64
        } else {
            0.0
        };
    }
    rows
}

pub fn write_profile_csv<W: std::io::Write>(out: W, m: &ModelStability) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["rank_fraction", "mae", "q05", "q95"])?;
    for row in profile_curve(m) {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rasterize;

    #[test]
    fn constant_intensity_counts_are_poisson() {
        let w = Window::unit_square();
        let counts: Vec<f64> = (0..500)
            .map(|s| {
                simulate_poisson(&Intensity::Constant(100.0), &w, s)
                    .unwrap()
                    .len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / 500.0;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 499.0;
        assert!(
            (mean - 100.0).abs() < 3.0 * (100.0f64 / 500.0).sqrt(),
            "mean {mean}"
        );
        assert!(
            (0.8..=1.2).contains(&(var / mean)),
            "dispersion {}",
            var / mean
        );
    }

    #[test]
    fn zero_intensity_is_empty() {
        let p = simulate_poisson(&Intensity::Constant(0.0), &Window::unit_square(), 1).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn two_level_intensity_ratio() {
        let w = Window::unit_square();
        let rho = |p: Point| if p.x < 0.5 { 10.0 } else { 100.0 };
        let (mut left, mut right) = (0usize, 0usize);
        for s in 0..500 {
            let x = simulate_poisson(
                &Intensity::Function {
                    rho: &rho,
                    bound: 100.0,
                },
                &w,
                s,
            )
            .unwrap();
            for p in x.points() {
                if p.x < 0.5 {
                    left += 1;
                } else {
                    right += 1;
                }
            }
        }
        let ratio = right as f64 / left as f64;
        // left total ~ Poisson(2500): relative sd of the ratio about 2%
        assert!((ratio - 10.0).abs() < 10.0 * 0.07, "ratio {ratio}");
    }

    #[test]
    fn raster_intensity_respects_mask() {
        let w = Window::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap();
        let r = rasterize(&w, 0.05).unwrap().filled_like(500.0);
        let x = simulate_poisson(&Intensity::Raster(&r), &w, 3).unwrap();
        assert!(x.len() > 100);
        assert!(x.check_inside(&w).is_ok());
    }

    fn pattern(n: usize) -> PointPattern {
        let pts = (0..n)
            .map(|i| Point::new(i as f64, 0.5 * i as f64))
            .collect();
        PointPattern::with_marks(pts, (0..n).map(|i| format!("m{i}")).collect(), None).unwrap()
    }

    #[test]
    fn undersample_cases() {
        let x = pattern(10);
        assert_eq!(undersample(&x, 1.0, 4).unwrap(), x);
        let u = undersample(&x, 0.7, 4).unwrap();
        assert_eq!(u.len(), 7);
        for (p, m) in u.points().iter().zip(u.marks().unwrap()) {
            let i = p.x as usize;
            assert_eq!(m, &format!("m{i}"));
        }
        assert!(undersample(&x, 0.0, 4).is_err());
        assert!(undersample(&x, 1.5, 4).is_err());
    }

    #[test]
    fn undersample_seeds_differ() {
        let x = pattern(20);
        let same = (0..200)
            .filter(|&s| {
                undersample(&x, 0.5, s).unwrap() == undersample(&x, 0.5, s + 1000).unwrap()
            })
            .count();
        assert!(same <= 2);
    }

    #[test]
    fn split_partitions() {
        let x = pattern(10);
        let (tr, te) = split_train_test(&x, 0.7, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let mut all: Vec<u64> = tr
            .points()
            .iter()
            .chain(te.points())
            .map(|p| p.x as u64)
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_train_test(&x, 0.7, 9).unwrap(), (tr, te));
        assert!(split_train_test(&x, 1.0, 9).is_err());
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.05) - 1.2).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.95) - 4.8).abs() < 1e-12);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn self_comparison_has_zero_error() {
        let w = Window::unit_square();
        let grid = rasterize(&w, 0.1).unwrap();
        let rho = |p: Point| 300.0 * p.x + 20.0;
        let x = simulate_poisson(
            &Intensity::Function {
                rho: &rho,
                bound: 320.0,
            },
            &w,
            5,
        )
        .unwrap();
        let mut stack = CovariateStack::new();
        stack.push_coordinates("x", "y").unwrap();
        let cfg = FitConfig {
            tiles_per_side: 12,
            path_length: 15,
            folds: 3,
            ..FitConfig::default()
        };
        let opts = StabilityOptions {
            replicates: 1,
            fraction: 1.0,
            seed: 2,
            raw_scale: false,
        };
        let rep = stability_eval(&x, &w, &stack, &grid, &cfg, &opts).unwrap();
        assert_eq!(rep.failed, 0);
        assert!(rep.dense.mae.defined_values().iter().all(|&v| v == 0.0));
        assert_eq!(rep.dense.mean_mae, 0.0);
        let curve = profile_curve(&rep.sparse);
        assert_eq!(curve.len(), grid.defined_count());
    }
}
