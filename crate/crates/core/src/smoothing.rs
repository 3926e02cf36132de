//! Isotropic Gaussian kernel smoothing on raster grids.
//!
//! Kernels are truncated at `6h`. Every per-cell sum runs over sources in a
//! fixed order, so results do not depend on the number of worker threads.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist_point_segment, Point, PointPattern, Raster, SegmentPattern, Window};

/// Kernel support radius in bandwidths.
pub const TRUNCATION: f64 = 6.0;

/// Isotropic Gaussian kernel with standard deviation `h` (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    h: f64,
}

impl KernelSpec {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!(
                "bandwidth must be positive and finite, got {h}"
            )));
        }
        Ok(Self { h })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Kernel density at squared distance `d2`, zero beyond the truncation radius.
    pub fn density(&self, d2: f64) -> f64 {
        if d2 > self.radius_sq() {
            0.0
        } else {
            (-d2 / (2.0 * self.h * self.h)).exp() / (2.0 * PI * self.h * self.h)
        }
    }

    fn radius_sq(&self) -> f64 {
        (TRUNCATION * self.h).powi(2)
    }
}

/// Target geometry for distance fields.
#[derive(Clone, Copy, Debug)]
pub enum DistanceTarget<'a> {
    Points(&'a PointPattern),
    Segments(&'a SegmentPattern),
}

/// Cells of `grid` that are defined and (when given) have centers in `w`.
fn cell_mask(grid: &Raster, w: Option<&Window>) -> Vec<bool> {
    crate::par::map_range(grid.len(), |i| {
        grid.is_defined(i) && w.is_none_or(|w| w.contains(grid.center_of(i)))
    })
}

fn grid_from(grid: &Raster, mask: &[bool], values: Vec<f64>) -> Raster {
    let nodata = grid.nodata();
    let vals = values
        .into_iter()
        .zip(mask)
        .map(|(v, &m)| if m { v } else { nodata })
        .collect();
    Raster::from_values(
        grid.origin(),
        grid.cell(),
        grid.ncols(),
        grid.nrows(),
        vals,
        nodata,
    )
    .expect("dimensions copied from grid")
}

/// Bucketed source lookup over the grid lattice.
struct SourceIndex<'a> {
    grid: &'a Raster,
    points: &'a [Point],
    buckets: Option<Vec<Vec<u32>>>,
    reach: isize,
}

impl<'a> SourceIndex<'a> {
    fn new(grid: &'a Raster, points: &'a [Point], radius: f64) -> Self {
        let reach = (radius / grid.cell()).ceil() as isize + 1;
        let window_cells = (2 * reach + 1).pow(2) as usize;
        let buckets = (window_cells < points.len()).then(|| {
            let mut b = vec![Vec::new(); grid.len()];
            for (i, p) in points.iter().enumerate() {
                let (r, c) = clamp_cell(grid, *p);
                b[grid.index(r, c)].push(i as u32);
            }
            b
        });
        Self {
            grid,
            points,
            buckets,
            reach,
        }
    }

    /// Calls `f(i, d2)` for every source within `radius_sq` of `c`, in a fixed order.
    fn for_each_near(&self, cell: usize, radius_sq: f64, mut f: impl FnMut(usize, f64)) {
        let c = self.grid.center_of(cell);
        match &self.buckets {
            None => {
                for (i, p) in self.points.iter().enumerate() {
                    let d2 = c.dist_sq(p);
                    if d2 <= radius_sq {
                        f(i, d2);
                    }
                }
            }
            Some(buckets) => {
                let (row, col) = self.grid.row_col(cell);
                let (nr, nc) = (self.grid.nrows() as isize, self.grid.ncols() as isize);
                let r0 = (row as isize - self.reach).max(0);
                let r1 = (row as isize + self.reach).min(nr - 1);
                let c0 = (col as isize - self.reach).max(0);
                let c1 = (col as isize + self.reach).min(nc - 1);
                for r in r0..=r1 {
                    for cc in c0..=c1 {
                        for &i in &buckets[self.grid.index(r as usize, cc as usize)] {
                            let d2 = c.dist_sq(&self.points[i as usize]);
                            if d2 <= radius_sq {
                                f(i as usize, d2);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Grid cell nearest to `p`, clamping points that fall off the grid.
fn clamp_cell(grid: &Raster, p: Point) -> (usize, usize) {
    let o = grid.origin();
    let col = ((p.x - o.x) / grid.cell())
        .floor()
        .clamp(0.0, grid.ncols() as f64 - 1.0) as usize;
    let from_bottom = ((p.y - o.y) / grid.cell())
        .floor()
        .clamp(0.0, grid.nrows() as f64 - 1.0) as usize;
    (grid.nrows() - 1 - from_bottom, col)
}

/// `Σ_i mass_i κ_h(c − p_i)` at every masked cell.
fn smooth_sources(
    grid: &Raster,
    mask: &[bool],
    points: &[Point],
    mass: &[f64],
    spec: KernelSpec,
) -> Vec<f64> {
    let index = SourceIndex::new(grid, points, TRUNCATION * spec.bandwidth());
    let r2 = spec.radius_sq();
    let inv_2h2 = 1.0 / (2.0 * spec.bandwidth().powi(2));
    let norm = 1.0 / (2.0 * PI * spec.bandwidth().powi(2));
    crate::par::map_range(grid.len(), |cell| {
        if !mask[cell] {
            return 0.0;
        }
        let mut s = 0.0;
        index.for_each_near(cell, r2, |i, d2| s += mass[i] * (-d2 * inv_2h2).exp());
        s * norm
    })
}

/// Sum of `κ_h(u − p) · cell²` over the cells `u` selected by `include`
/// (all lattice cells when `include` is `None`).
fn kernel_mass(grid: &Raster, p: Point, spec: KernelSpec, include: Option<&[bool]>) -> f64 {
    let h = spec.bandwidth();
    let cell = grid.cell();
    let o = grid.origin();
    let reach = (TRUNCATION * h / cell).ceil() as i64 + 1;
    let col_p = ((p.x - o.x) / cell).floor() as i64;
    let row_p = ((p.y - o.y) / cell).floor() as i64; // counted from the bottom
    let (nc, nr) = (grid.ncols() as i64, grid.nrows() as i64);
    let mut s = 0.0;
    for rb in (row_p - reach)..=(row_p + reach) {
        for c in (col_p - reach)..=(col_p + reach) {
            if let Some(mask) = include {
                if rb < 0 || rb >= nr || c < 0 || c >= nc {
                    continue;
                }
                let idx = grid.index((nr - 1 - rb) as usize, c as usize);
                if !mask[idx] {
                    continue;
                }
            }
            let u = Point::new(
                o.x + (c as f64 + 0.5) * cell,
                o.y + (rb as f64 + 0.5) * cell,
            );
            s += spec.density(u.dist_sq(&p));
        }
    }
    s * cell * cell
}

/// Index of the masked cell whose center is nearest to `p`.
fn nearest_masked_cell(grid: &Raster, mask: &[bool], p: Point) -> Option<usize> {
    (0..grid.len()).filter(|&i| mask[i]).min_by(|&a, &b| {
        p.dist_sq(&grid.center_of(a))
            .total_cmp(&p.dist_sq(&grid.center_of(b)))
    })
}

/// Smooths unit-or-weighted sources without edge correction. Each source's
/// kernel is normalized over the unbounded grid lattice when the bandwidth is
/// small relative to the cell, so mass is conserved down to the delta limit.
fn smooth_no_edge(
    grid: &Raster,
    mask: &[bool],
    points: &[Point],
    mass: &[f64],
    spec: KernelSpec,
) -> Vec<f64> {
    let fine = spec.bandwidth() >= 2.0 * grid.cell();
    let lattice: Vec<f64> = if fine {
        vec![1.0; points.len()]
    } else {
        crate::par::map_slice(points, |p| kernel_mass(grid, *p, spec, None))
    };
    let scaled: Vec<f64> = mass
        .iter()
        .zip(&lattice)
        .map(|(m, l)| if *l > 0.0 { m / l } else { 0.0 })
        .collect();
    let mut out = smooth_sources(grid, mask, points, &scaled, spec);
    let cell_area = grid.cell() * grid.cell();
    for (i, p) in points.iter().enumerate() {
        if lattice[i] == 0.0 {
            // no lattice center within the kernel support: the source's mass lands in its own cell
            if let Some((r, c)) = grid.locate(*p) {
                let idx = grid.index(r, c);
                if mask[idx] {
                    out[idx] += mass[i] / cell_area;
                }
            }
        }
    }
    out
}

/// Edge-corrected Gaussian kernel intensity estimate.
///
/// Each event's kernel is divided by its in-window mass `∫_W κ_h(u − x_i) du`,
/// computed as a Riemann sum over the in-window cells of `grid`, so the
/// estimate integrates to `n` over the grid.
pub fn kernel_intensity(
    x: &PointPattern,
    w: &Window,
    spec: KernelSpec,
    grid: &Raster,
) -> Result<Raster> {
    let mask = cell_mask(grid, Some(w));
    if x.is_empty() {
        log::warn!("kernel intensity of an empty pattern is identically zero");
        return Ok(grid_from(grid, &mask, vec![0.0; grid.len()]));
    }
    let pts = x.points();
    let edge: Vec<f64> = crate::par::map_slice(pts, |p| kernel_mass(grid, *p, spec, Some(&mask)));
    let mass: Vec<f64> = edge
        .iter()
        .map(|&e| if e > 0.0 { 1.0 / e } else { 0.0 })
        .collect();
    let mut out = smooth_sources(grid, &mask, pts, &mass, spec);
    let cell_area = grid.cell() * grid.cell();
    for (i, p) in pts.iter().enumerate() {
        if edge[i] == 0.0 {
            if let Some(idx) = nearest_masked_cell(grid, &mask, *p) {
                out[idx] += 1.0 / cell_area;
            }
        }
    }
    Ok(grid_from(grid, &mask, out))
}

/// Line density (meters of line per m²) of a segment pattern.
pub fn segment_density(
    lines: &SegmentPattern,
    w: &Window,
    spec: KernelSpec,
    grid: &Raster,
) -> Raster {
    let mask = cell_mask(grid, Some(w));
    let step = grid.cell() / 2.0;
    let mut pts = Vec::new();
    let mut mass = Vec::new();
    for s in lines.segments() {
        let len = s.length();
        let k = ((len / step).ceil() as usize).max(1);
        for j in 0..k {
            pts.push(s.at((j as f64 + 0.5) / k as f64));
            mass.push(len / k as f64);
        }
    }
    grid_from(grid, &mask, smooth_no_edge(grid, &mask, &pts, &mass, spec))
}

/// Smoothed point counts per m², without edge correction.
pub fn pixel_count_density(p: &PointPattern, grid: &Raster, spec: KernelSpec) -> Raster {
    let mask = cell_mask(grid, None);
    let mass = vec![1.0; p.len()];
    grid_from(
        grid,
        &mask,
        smooth_no_edge(grid, &mask, p.points(), &mass, spec),
    )
}

/// Distance in meters from each defined cell center to the nearest target.
pub fn distance_raster(target: DistanceTarget<'_>, grid: &Raster) -> Result<Raster> {
    let mask = cell_mask(grid, None);
    let values = match target {
        DistanceTarget::Points(p) => {
            if p.is_empty() {
                return Err(Error::Input("distance target pattern is empty".into()));
            }
            crate::par::map_range(grid.len(), |i| {
                if !mask[i] {
                    return 0.0;
                }
                let c = grid.center_of(i);
                p.points()
                    .iter()
                    .map(|q| c.dist(q))
                    .fold(f64::INFINITY, f64::min)
            })
        }
        DistanceTarget::Segments(s) => {
            if s.is_empty() {
                return Err(Error::Input(
                    "distance target segment pattern is empty".into(),
                ));
            }
            crate::par::map_range(grid.len(), |i| {
                if !mask[i] {
                    return 0.0;
                }
                let c = grid.center_of(i);
                s.segments()
                    .iter()
                    .map(|seg| dist_point_segment(c, seg))
                    .fold(f64::INFINITY, f64::min)
            })
        }
    };
    Ok(grid_from(grid, &mask, values))
}

/// Nadaraya–Watson smoother of point values:
/// `Σ m_i κ_h(c − x_i) / Σ κ_h(c − x_i)`. Cells where the denominator falls
/// below `1e-300` are nodata.
pub fn interpolate_intensity(
    points: &[Point],
    marks: &[f64],
    w: &Window,
    spec: KernelSpec,
    grid: &Raster,
) -> Result<Raster> {
    if points.is_empty() {
        return Err(Error::Input("nothing to interpolate".into()));
    }
    if points.len() != marks.len() {
        return Err(Error::Input(format!(
            "{} marks for {} points",
            marks.len(),
            points.len()
        )));
    }
    if marks.iter().any(|m| !m.is_finite()) {
        return Err(Error::Domain("interpolated marks must be finite".into()));
    }
    let mask = cell_mask(grid, Some(w));
    let index = SourceIndex::new(grid, points, TRUNCATION * spec.bandwidth());
    let r2 = spec.radius_sq();
    let inv_2h2 = 1.0 / (2.0 * spec.bandwidth().powi(2));
    let norm = 1.0 / (2.0 * PI * spec.bandwidth().powi(2));
    let values: Vec<Option<f64>> = crate::par::map_range(grid.len(), |cell| {
        if !mask[cell] {
            return None;
        }
        let (mut num, mut den) = (0.0, 0.0);
        index.for_each_near(cell, r2, |i, d2| {
            let k = (-d2 * inv_2h2).exp();
            num += marks[i] * k;
            den += k;
        });
        (den * norm >= 1e-300).then(|| num / den)
    });
    let nodata = grid.nodata();
    let vals = values.into_iter().map(|v| v.unwrap_or(nodata)).collect();
    Raster::from_values(
        grid.origin(),
        grid.cell(),
        grid.ncols(),
        grid.nrows(),
        vals,
        nodata,
    )
}
