//! Covariate assembly: raster, coordinate and zone covariates, pairwise
//! interactions, weighted standardization and the kernel benchmark covariate.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::bandwidth::{points_as_rows, select_bandwidth, BandwidthReport};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::geom::{Point, PointPattern, Raster, Window};
use crate::smoothing::{kernel_intensity, KernelSpec};

/// Search radius, in cells, for filling nodata lookups.
pub const NODATA_FILL_CELLS: usize = 3;

/// Piecewise-constant covariate over polygonal zones.
#[derive(Clone, Debug, PartialEq)]
pub struct ZoneCovariate {
    zones: Vec<(String, Window, f64)>,
}

impl ZoneCovariate {
    pub fn new(zones: Vec<(String, Window, f64)>) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::Input(
                "zone covariate needs at least one zone".into(),
            ));
        }
        Ok(Self { zones })
    }

    /// Reads zone polygons (`zone,x,y`, vertices in order) and zone values (`zone,value`).
    pub fn read<R1: Read, R2: Read>(polygons: R1, values: R2) -> Result<Self> {
        let mut verts: BTreeMap<String, Vec<Point>> = BTreeMap::new();
        let mut order = Vec::new();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(polygons);
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec[0].to_string();
            let p = Point::new(
                rec[1]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad x '{}'", &rec[1])))?,
                rec[2]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad y '{}'", &rec[2])))?,
            );
            if !verts.contains_key(&id) {
                order.push(id.clone());
            }
            verts.entry(id).or_default().push(p);
        }
        let mut vals = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(values);
        for rec in rdr.records() {
            let rec = rec?;
            let v: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad zone value '{}'", &rec[1])))?;
            vals.insert(rec[0].to_string(), v);
        }
        let zones = order
            .into_iter()
            .map(|id| {
                let value = *vals
                    .get(&id)
                    .ok_or_else(|| Error::Input(format!("zone '{id}' has no value")))?;
                let w = Window::new(verts.remove(&id).unwrap_or_default())?;
                Ok((id, w, value))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(zones)
    }

    /// Value of the first zone containing `p`.
    pub fn value_at(&self, p: Point) -> Option<f64> {
        self.zones
            .iter()
            .find(|(_, w, _)| w.contains(p))
            .map(|(_, _, v)| *v)
    }

    /// Value at `p`, falling back to the zone with the nearest boundary.
    fn value_or_nearest(&self, p: Point) -> f64 {
        self.value_at(p).unwrap_or_else(|| {
            self.zones
                .iter()
                .min_by(|a, b| {
                    a.1.boundary_distance(p)
                        .total_cmp(&b.1.boundary_distance(p))
                })
                .map(|z| z.2)
                .expect("zones are nonempty")
        })
    }

    pub fn to_raster(&self, grid: &Raster) -> Raster {
        grid.from_fn_like(|i| self.value_at(grid.center_of(i)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CovariateSource {
    Raster(Raster),
    CoordX,
    CoordY,
    Zones(ZoneCovariate),
    /// Product of two base columns (a square when both indices agree).
    Product(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub source: CovariateSource,
}

/// Named covariates `z_1..z_K`, optionally extended with interaction columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CovariateStack {
    columns: Vec<Column>,
}

impl CovariateStack {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_name(&self, name: &str) -> Result<()> {
        if self.columns.iter().any(|c| c.name == name) {
            return Err(Error::Config(format!("duplicate covariate name '{name}'")));
        }
        Ok(())
    }

    pub fn push_raster(&mut self, name: &str, raster: Raster) -> Result<()> {
        self.check_name(name)?;
        if let Some(first) = self.columns.iter().find_map(|c| match &c.source {
            CovariateSource::Raster(r) => Some(r),
            _ => None,
        }) {
            if !first.same_grid(&raster) {
                return Err(Error::Input(format!(
                    "covariate '{name}' is not on the common grid"
                )));
            }
        }
        self.columns.push(Column {
            name: name.to_string(),
            source: CovariateSource::Raster(raster),
        });
        Ok(())
    }

    /// Adds raw `x` and `y` coordinate columns.
    pub fn push_coordinates(&mut self, name_x: &str, name_y: &str) -> Result<()> {
        self.check_name(name_x)?;
        self.check_name(name_y)?;
        self.columns.push(Column {
            name: name_x.to_string(),
            source: CovariateSource::CoordX,
        });
        self.columns.push(Column {
            name: name_y.to_string(),
            source: CovariateSource::CoordY,
        });
        Ok(())
    }

    pub fn push_zones(&mut self, name: &str, zones: ZoneCovariate) -> Result<()> {
        self.check_name(name)?;
        self.columns.push(Column {
            name: name.to_string(),
            source: CovariateSource::Zones(zones),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// `(i, j)` parent indices of every product column.
    pub fn interaction_map(&self) -> Vec<(usize, usize)> {
        self.columns
            .iter()
            .filter_map(|c| match c.source {
                CovariateSource::Product(i, j) => Some((i, j)),
                _ => None,
            })
            .collect()
    }

    fn base_count(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| !matches!(c.source, CovariateSource::Product(..)))
            .count()
    }

    /// Evaluates every column at `points`.
    ///
    /// Raster lookups that hit nodata use the nearest defined cell within
    /// `NODATA_FILL_CELLS` cells.
    pub fn eval_at(&self, points: &[Point]) -> Result<Design> {
        if self.columns.is_empty() {
            return Err(Error::Config("covariate stack is empty".into()));
        }
        let base: Vec<Result<Vec<f64>>> =
            crate::par::map_slice(&self.columns, |col| match &col.source {
                CovariateSource::Raster(r) => eval_raster(&col.name, r, points),
                CovariateSource::CoordX => Ok(points.iter().map(|p| p.x).collect()),
                CovariateSource::CoordY => Ok(points.iter().map(|p| p.y).collect()),
                CovariateSource::Zones(z) => {
                    Ok(points.iter().map(|p| z.value_or_nearest(*p)).collect())
                }
                CovariateSource::Product(..) => Ok(Vec::new()),
            });
        let mut cols = base.into_iter().collect::<Result<Vec<_>>>()?;
        for k in 0..self.columns.len() {
            if let CovariateSource::Product(i, j) = self.columns[k].source {
                cols[k] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).collect();
            }
        }
        let design = Design::from_columns(self.names(), cols)?;
        if !design.all_finite() {
            return Err(Error::Numerical(
                "covariate design contains non-finite values".into(),
            ));
        }
        Ok(design)
    }

    /// Evaluates every column at the cell centers of `grid`; `None` where a
    /// covariate is undefined.
    pub fn eval_grid(&self, grid: &Raster) -> Vec<Vec<Option<f64>>> {
        let centers: Vec<Point> = (0..grid.len()).map(|i| grid.center_of(i)).collect();
        let mut cols: Vec<Vec<Option<f64>>> =
            crate::par::map_slice(&self.columns, |col| match &col.source {
                CovariateSource::Raster(r) => {
                    if r.same_grid(grid) {
                        (0..grid.len())
                            .map(|i| r.is_defined(i).then(|| r.values()[i]))
                            .collect()
                    } else {
                        centers.iter().map(|c| r.value_at(*c)).collect()
                    }
                }
                CovariateSource::CoordX => centers.iter().map(|c| Some(c.x)).collect(),
                CovariateSource::CoordY => centers.iter().map(|c| Some(c.y)).collect(),
                CovariateSource::Zones(z) => centers.iter().map(|c| z.value_at(*c)).collect(),
                CovariateSource::Product(..) => Vec::new(),
            });
        for k in 0..self.columns.len() {
            if let CovariateSource::Product(i, j) = self.columns[k].source {
                cols[k] = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| Some((*a)? * (*b)?))
                    .collect();
            }
        }
        cols
    }
}

fn eval_raster(name: &str, r: &Raster, points: &[Point]) -> Result<Vec<f64>> {
    let mut filled = 0usize;
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if let Some(v) = r.value_at(*p) {
            out.push(v);
            continue;
        }
        match nearest_defined(r, *p) {
            Some(v) => {
                filled += 1;
                out.push(v);
            }
            None => {
                return Err(Error::Input(format!(
                    "covariate '{name}' is undefined near ({}, {})",
                    p.x, p.y
                )))
            }
        }
    }
    if filled > 0 {
        log::warn!("covariate '{name}': {filled} points took values from nearby cells");
    }
    Ok(out)
}

fn nearest_defined(r: &Raster, p: Point) -> Option<f64> {
    let o = r.origin();
    let reach = NODATA_FILL_CELLS as i64;
    let col = ((p.x - o.x) / r.cell()).floor() as i64;
    let row_b = ((p.y - o.y) / r.cell()).floor() as i64;
    let mut best: Option<(f64, f64)> = None;
    for rb in (row_b - reach)..=(row_b + reach) {
        for c in (col - reach)..=(col + reach) {
            if rb < 0 || c < 0 || rb >= r.nrows() as i64 || c >= r.ncols() as i64 {
                continue;
            }
            let row = r.nrows() - 1 - rb as usize;
            if let Some(v) = r.get(row, c as usize) {
                let d = p.dist_sq(&r.cell_center(row, c as usize));
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, v));
                }
            }
        }
    }
    best.map(|(_, v)| v)
}

/// Appends `z_i·z_j` for all base columns `i < j`, plus squares `z_i²` when
/// `include_squares` is set. Product columns are named `zi:zj`.
pub fn expand_interactions(
    stack: &CovariateStack,
    include_squares: bool,
) -> Result<CovariateStack> {
    let k = stack.base_count();
    if k < 2 {
        return Err(Error::Config(
            "interaction expansion needs at least 2 covariates".into(),
        ));
    }
    let base: Vec<usize> = (0..stack.len())
        .filter(|&i| !matches!(stack.columns[i].source, CovariateSource::Product(..)))
        .collect();
    let mut out = stack.clone();
    let mut pairs = Vec::new();
    for (a, &i) in base.iter().enumerate() {
        for &j in &base[a + 1..] {
            pairs.push((i, j));
        }
    }
    if include_squares {
        pairs.extend(base.iter().map(|&i| (i, i)));
    }
    let existing: HashSet<String> = out.names().into_iter().collect();
    for (i, j) in pairs {
        let name = format!("{}:{}", stack.columns[i].name, stack.columns[j].name);
        if existing.contains(&name) {
            continue;
        }
        out.columns.push(Column {
            name,
            source: CovariateSource::Product(i, j),
        });
    }
    Ok(out)
}

/// Per-column centering and scaling under normalized quadrature weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Names of every input column.
    pub names: Vec<String>,
    /// Indices of columns kept (non-constant).
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub dropped: Vec<String>,
}

impl Standardization {
    /// Original-scale coefficients (one per input column, dropped columns 0).
    pub fn to_original(&self, beta0: f64, beta_std: &[f64]) -> (f64, Vec<f64>) {
        let mut beta = vec![0.0; self.names.len()];
        let mut b0 = beta0;
        for (k, &col) in self.kept.iter().enumerate() {
            if beta_std[k] != 0.0 {
                beta[col] = beta_std[k] / self.sds[k];
                b0 -= beta[col] * self.means[k];
            }
        }
        (b0, beta)
    }

    /// Standardized-scale coefficients for the kept columns.
    pub fn to_standardized(&self, beta0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let mut b0 = beta0;
        let std = self
            .kept
            .iter()
            .enumerate()
            .map(|(k, &col)| {
                b0 += beta[col] * self.means[k];
                beta[col] * self.sds[k]
            })
            .collect();
        (b0, std)
    }
}

/// Centers and scales every column by its weighted mean and sd under weights
/// `w_j / Σ w`. Constant columns are dropped with a warning.
pub fn standardize(design: &Design, weights: &[f64]) -> Result<(Design, Standardization)> {
    if weights.len() != design.nrows() {
        return Err(Error::Input(format!(
            "{} weights for {} design rows",
            weights.len(),
            design.nrows()
        )));
    }
    let total: f64 = weights.iter().sum();
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut dropped = Vec::new();
    let mut cols = Vec::new();
    for (k, col) in design.columns().enumerate() {
        let mean = col.iter().zip(weights).map(|(z, w)| z * w).sum::<f64>() / total;
        let var = col
            .iter()
            .zip(weights)
            .map(|(z, w)| w * (z - mean).powi(2))
            .sum::<f64>()
            / total;
        let sd = var.sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            log::warn!(
                "covariate '{}' is constant over the quadrature points and was dropped",
                design.names()[k]
            );
            dropped.push(design.names()[k].clone());
            continue;
        }
        kept.push(k);
        means.push(mean);
        sds.push(sd);
        cols.push(col.iter().map(|z| (z - mean) / sd).collect());
    }
    if kept.is_empty() {
        return Err(Error::Numerical(
            "every covariate column is constant".into(),
        ));
    }
    let names = kept.iter().map(|&k| design.names()[k].clone()).collect();
    Ok((
        Design::from_columns(names, cols)?,
        Standardization {
            names: design.names().to_vec(),
            kept,
            means,
            sds,
            dropped,
        },
    ))
}

/// Edge-corrected kernel intensity of the pattern with the K-means heuristic
/// bandwidth, for use as the `benchmark` covariate.
pub fn benchmark_covariate(
    x: &PointPattern,
    w: &Window,
    grid: &Raster,
    k_max: usize,
    seed: u64,
) -> Result<(Raster, BandwidthReport)> {
    if x.len() < 3 {
        return Err(Error::Input(
            "benchmark intensity needs at least 3 events".into(),
        ));
    }
    let k_max = k_max.min(x.len() - 1).max(2);
    let report = select_bandwidth(&points_as_rows(x.points()), k_max, seed)?;
    let raster = kernel_intensity(x, w, KernelSpec::new(report.h)?, grid)?;
    Ok((raster, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rasterize;
    use rand::Rng as _;

    fn grid() -> Raster {
        rasterize(&Window::unit_square(), 0.1).unwrap()
    }

    #[test]
    fn constant_raster_column() {
        let mut s = CovariateStack::new();
        s.push_raster("c", grid().filled_like(2.5)).unwrap();
        let d = s
            .eval_at(&[Point::new(0.3, 0.3), Point::new(0.95, 0.05)])
            .unwrap();
        assert_eq!(d.col(0), &[2.5, 2.5]);
    }

    #[test]
    fn coordinate_columns() {
        let mut s = CovariateStack::new();
        s.push_coordinates("x", "y").unwrap();
        let d = s.eval_at(&[Point::new(3.0, 7.0)]).unwrap();
        assert_eq!(d.row(0), vec![3.0, 7.0]);
    }

    #[test]
    fn zone_column() {
        let z = ZoneCovariate::new(vec![
            (
                "A".into(),
                Window::rectangle(0.0, 0.0, 0.5, 1.0).unwrap(),
                5.0,
            ),
            (
                "B".into(),
                Window::rectangle(0.5, 0.0, 1.0, 1.0).unwrap(),
                -1.0,
            ),
        ])
        .unwrap();
        let mut s = CovariateStack::new();
        s.push_zones("zone", z.clone()).unwrap();
        let d = s
            .eval_at(&[Point::new(0.2, 0.5), Point::new(0.8, 0.5)])
            .unwrap();
        assert_eq!(d.col(0), &[5.0, -1.0]);
        let r = z.to_raster(&grid());
        assert_eq!(r.value_at(Point::new(0.05, 0.05)), Some(5.0));
    }

    #[test]
    fn zone_csv_reader() {
        let polys = "zone,x,y\nA,0,0\nA,1,0\nA,1,1\nA,0,1\n";
        let vals = "zone,value\nA,4.5\n";
        let z = ZoneCovariate::read(polys.as_bytes(), vals.as_bytes()).unwrap();
        assert_eq!(z.value_at(Point::new(0.5, 0.5)), Some(4.5));
        assert!(ZoneCovariate::read(polys.as_bytes(), "zone,value\nB,1\n".as_bytes()).is_err());
    }

    #[test]
    fn nodata_filled_from_neighbour_or_rejected() {
        let g = grid();
        let mut r = g.filled_like(1.0);
        r.set(9, 0, r.nodata());
        let mut s = CovariateStack::new();
        s.push_raster("r", r.clone()).unwrap();
        assert_eq!(s.eval_at(&[Point::new(0.05, 0.05)]).unwrap().col(0), &[1.0]);

        let mut far = g.clone();
        far.values_mut().iter_mut().for_each(|v| *v = far_nodata());
        far.set(0, 9, 3.0);
        let mut s = CovariateStack::new();
        s.push_raster("far", far).unwrap();
        assert!(s.eval_at(&[Point::new(0.05, 0.05)]).is_err());
    }

    fn far_nodata() -> f64 {
        crate::geom::DEFAULT_NODATA
    }

    #[test]
    fn duplicate_names_and_grid_mismatch_rejected() {
        let mut s = CovariateStack::new();
        s.push_raster("a", grid()).unwrap();
        assert!(s.push_raster("a", grid()).is_err());
        let other = rasterize(&Window::unit_square(), 0.05).unwrap();
        assert!(s.push_raster("b", other).is_err());
    }

    #[test]
    fn interaction_counts() {
        let g = grid();
        let mut s = CovariateStack::new();
        for k in 0..43 {
            s.push_raster(&format!("z{k}"), g.filled_like(k as f64))
                .unwrap();
        }
        assert_eq!(expand_interactions(&s, true).unwrap().len(), 989);
        assert_eq!(expand_interactions(&s, false).unwrap().len(), 43 + 903);

        let mut two = CovariateStack::new();
        two.push_coordinates("z1", "z2").unwrap();
        let e = expand_interactions(&two, false).unwrap();
        assert_eq!(e.names(), vec!["z1", "z2", "z1:z2"]);
        assert_eq!(e.interaction_map(), vec![(0, 1)]);
    }

    #[test]
    fn product_columns_are_exact_products() {
        let g = grid();
        let mut rng = crate::rng::rng(1);
        let mut r = g.clone();
        r.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random::<f64>() * 10.0 - 3.0);
        let mut s = CovariateStack::new();
        s.push_raster("r", r).unwrap();
        s.push_coordinates("x", "y").unwrap();
        let e = expand_interactions(&s, true).unwrap();
        let pts: Vec<Point> = (0..100)
            .map(|_| Point::new(rng.random(), rng.random()))
            .collect();
        let base = s.eval_at(&pts).unwrap();
        let full = e.eval_at(&pts).unwrap();
        for (k, &(i, j)) in e.interaction_map().iter().enumerate() {
            let col = full.col(3 + k);
            for (row, v) in col.iter().enumerate() {
                assert_eq!(*v, base.get(row, i) * base.get(row, j));
            }
        }
    }

    #[test]
    fn standardized_moments_and_back_transform() {
        let mut rng = crate::rng::rng(3);
        let m = 200;
        let weights: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.01).collect();
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                (0..m)
                    .map(|_| rng.random::<f64>() * (k as f64 + 1.0) + k as f64)
                    .collect()
            })
            .collect();
        let d = Design::from_columns(vec!["a".into(), "b".into(), "c".into()], cols).unwrap();
        let (sd, st) = standardize(&d, &weights).unwrap();
        let total: f64 = weights.iter().sum();
        for col in sd.columns() {
            let mean: f64 = col.iter().zip(&weights).map(|(z, w)| z * w).sum::<f64>() / total;
            let var: f64 = col
                .iter()
                .zip(&weights)
                .map(|(z, w)| w * (z - mean).powi(2))
                .sum::<f64>()
                / total;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
        let beta_std = [0.4, -1.2, 0.0];
        let (b0, beta) = st.to_original(0.7, &beta_std);
        let eta_std = sd.linear_predictor(0.7, &beta_std);
        let eta_orig = d.linear_predictor(b0, &beta);
        for (a, b) in eta_std.iter().zip(&eta_orig) {
            assert!((a - b).abs() < 1e-10);
        }
        let (b0s, back) = st.to_standardized(b0, &beta);
        assert!((b0s - 0.7).abs() < 1e-12);
        for (a, b) in back.iter().zip(&beta_std) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_dropped() {
        let d = Design::from_columns(
            vec!["const".into(), "v".into()],
            vec![vec![2.0; 4], vec![1.0, 2.0, 3.0, 4.0]],
        )
        .unwrap();
        let (sd, st) = standardize(&d, &[1.0; 4]).unwrap();
        assert_eq!(sd.ncols(), 1);
        assert_eq!(st.dropped, vec!["const".to_string()]);
        let only_const = Design::from_columns(vec!["c".into()], vec![vec![1.0; 3]]).unwrap();
        assert!(standardize(&only_const, &[1.0; 3]).is_err());
    }

    #[test]
    fn benchmark_mass_and_determinism() {
        let w = Window::unit_square();
        let g = rasterize(&w, 1.0 / 64.0).unwrap();
        let mut rng = crate::rng::rng(8);
        let pts: Vec<Point> = (0..60)
            .map(|i| {
                let c = if i % 2 == 0 { 0.25 } else { 0.7 };
                Point::new(c + 0.1 * rng.random::<f64>(), c + 0.1 * rng.random::<f64>())
            })
            .collect();
        let x = PointPattern::new(pts).unwrap();
        let (r, rep) = benchmark_covariate(&x, &w, &g, 10, 5).unwrap();
        assert!((r.integral() - 60.0).abs() / 60.0 < 0.01);
        let (r2, rep2) = benchmark_covariate(&x, &w, &g, 10, 5).unwrap();
        assert_eq!(r, r2);
        assert_eq!(rep, rep2);
    }
}
