use serde::{Deserialize, Serialize};

use super::{Point, Window};
use crate::error::{Error, Result};

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Square-cell pixel grid. Row 0 is the top (northernmost) row, matching the
/// ESRI ASCII layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    origin: Point,
    cell: f64,
    ncols: usize,
    nrows: usize,
    values: Vec<f64>,
    nodata: f64,
}

impl Raster {
    /// A grid with every cell set to nodata.
    pub fn new(origin: Point, cell: f64, ncols: usize, nrows: usize, nodata: f64) -> Result<Self> {
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(Error::InvalidResolution(format!(
                "cell size must be positive, got {cell}"
            )));
        }
        if ncols == 0 || nrows == 0 {
            return Err(Error::InvalidResolution(
                "raster needs at least one row and column".into(),
            ));
        }
        Ok(Self {
            origin,
            cell,
            ncols,
            nrows,
            values: vec![nodata; ncols * nrows],
            nodata,
        })
    }

    pub fn from_values(
        origin: Point,
        cell: f64,
        ncols: usize,
        nrows: usize,
        values: Vec<f64>,
        nodata: f64,
    ) -> Result<Self> {
        let mut r = Self::new(origin, cell, ncols, nrows, nodata)?;
        if values.len() != ncols * nrows {
            return Err(Error::Input(format!(
                "expected {} raster values, got {}",
                ncols * nrows,
                values.len()
            )));
        }
        r.values = values;
        Ok(r)
    }

    /// Same grid and mask as `self`, defined cells set to `value`.
    pub fn filled_like(&self, value: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            if *v != self.nodata {
                *v = value;
            }
        }
        out
    }

    /// Same grid and mask, defined cells replaced by `f(index)`; `None` marks nodata.
    pub fn from_fn_like<F>(&self, f: F) -> Self
    where
        F: Fn(usize) -> Option<f64> + Sync + Send,
    {
        let mut values = vec![0.0; self.values.len()];
        crate::par::fill_indexed(&mut values, |i| {
            if self.values[i] == self.nodata {
                self.nodata
            } else {
                f(i).unwrap_or(self.nodata)
            }
        });
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    pub fn row_col(&self, idx: usize) -> (usize, usize) {
        (idx / self.ncols, idx % self.ncols)
    }

    pub fn is_defined(&self, idx: usize) -> bool {
        self.values[idx] != self.nodata
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[self.index(row, col)];
        (v != self.nodata).then_some(v)
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let i = self.index(row, col);
        self.values[i] = v;
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.cell,
            self.origin.y + ((self.nrows - row) as f64 - 0.5) * self.cell,
        )
    }

    pub fn center_of(&self, idx: usize) -> Point {
        let (r, c) = self.row_col(idx);
        self.cell_center(r, c)
    }

    /// Cell containing `p`, if it is on the grid. Points on the upper or right
    /// grid edge map to the last row/column.
    pub fn locate(&self, p: Point) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.ncols as f64 && fy <= self.nrows as f64) {
            return None;
        }
        let col = (fx.floor() as usize).min(self.ncols - 1);
        let from_bottom = (fy.floor() as usize).min(self.nrows - 1);
        Some((self.nrows - 1 - from_bottom, col))
    }

    pub fn value_at(&self, p: Point) -> Option<f64> {
        self.locate(p).and_then(|(r, c)| self.get(r, c))
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.origin == other.origin
            && self.cell == other.cell
            && self.ncols == other.ncols
            && self.nrows == other.nrows
    }

    pub fn defined_indices(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&i| self.is_defined(i))
            .collect()
    }

    pub fn defined_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != self.nodata).count()
    }

    pub fn defined_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .copied()
            .filter(|&v| v != self.nodata)
            .collect()
    }

    /// Riemann sum of defined cells.
    pub fn integral(&self) -> f64 {
        let area = self.cell * self.cell;
        self.values
            .iter()
            .filter(|&&v| v != self.nodata)
            .map(|v| v * area)
            .sum()
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .copied()
            .filter(|&v| v != self.nodata)
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Rescales defined cells to `[0, 1]`. A constant raster maps to all zeros.
    pub fn normalized(&self) -> Self {
        let Some((lo, hi)) = self.min_max() else {
            return self.clone();
        };
        let span = hi - lo;
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            if *v != self.nodata {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            if *v != self.nodata {
                *v *= c;
            }
        }
        out
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            origin: Point::new(self.origin.x + dx, self.origin.y + dy),
            ..self.clone()
        }
    }
}

/// Grid over the bounding box of `w`, aligned to its lower-left corner.
/// Cells whose center lies in `w` hold 0.0; the rest hold nodata.
pub fn rasterize(w: &Window, cell: f64) -> Result<Raster> {
    if !(cell > 0.0) || !cell.is_finite() {
        return Err(Error::InvalidResolution(format!(
            "cell size must be positive, got {cell}"
        )));
    }
    let (min, _) = w.bbox();
    let count = |extent: f64| ((extent / cell) - 1e-9).ceil().max(1.0) as usize;
    let (ncols, nrows) = (count(w.width()), count(w.height()));
    if cell > w.width() || cell > w.height() {
        log::warn!("cell size {cell} exceeds a window bounding-box side; raster is coarse");
    }
    let mut r = Raster::new(min, cell, ncols, nrows, DEFAULT_NODATA)?;
    let inside: Vec<bool> = crate::par::map_range(ncols * nrows, |i| w.contains(r.center_of(i)));
    for (v, inside) in r.values.iter_mut().zip(inside) {
        if inside {
            *v = 0.0;
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_half_cells() {
        let r = rasterize(&Window::unit_square(), 0.5).unwrap();
        assert_eq!((r.ncols(), r.nrows()), (2, 2));
        assert_eq!(r.defined_count(), 4);
    }

    #[test]
    fn unit_square_tenth_cells() {
        let w = Window::unit_square();
        let r = rasterize(&w, 0.1).unwrap();
        assert_eq!((r.ncols(), r.nrows()), (10, 10));
        let by_contains = (0..r.len()).filter(|&i| w.contains(r.center_of(i))).count();
        assert_eq!(by_contains, 100);
        assert_eq!(r.defined_count(), by_contains);
    }

    #[test]
    fn notch_cells_are_nodata() {
        let w = Window::new(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 2.0),
            Point::new(0.0, 2.0),
        ])
        .unwrap();
        let r = rasterize(&w, 0.1).unwrap();
        assert_eq!(r.value_at(Point::new(1.5, 1.5)), None);
        assert_eq!(r.value_at(Point::new(0.5, 1.5)), Some(0.0));
        assert_eq!(r.defined_count(), 300);
    }

    #[test]
    fn oversized_cell_gives_single_cell() {
        let r = rasterize(&Window::unit_square(), 5.0).unwrap();
        assert_eq!((r.ncols(), r.nrows()), (1, 1));
    }

    #[test]
    fn cell_geometry_round_trips() {
        let r = rasterize(&Window::rectangle(10.0, 20.0, 13.0, 22.0).unwrap(), 0.5).unwrap();
        for i in 0..r.len() {
            let (row, col) = r.row_col(i);
            assert_eq!(r.locate(r.center_of(i)), Some((row, col)));
        }
        assert_eq!(r.cell_center(0, 0), Point::new(10.25, 21.75));
    }

    #[test]
    fn mask_area_converges_on_convex_polygons() {
        let polys = [
            Window::new(vec![
                Point::new(0.0, 0.0),
                Point::new(3.0, 0.5),
                Point::new(1.0, 2.0),
            ])
            .unwrap(),
            Window::new(
                (0..12)
                    .map(|k| {
                        let a = k as f64 * std::f64::consts::TAU / 12.0;
                        Point::new(5.0 + 2.0 * a.cos(), 1.0 + 2.0 * a.sin())
                    })
                    .collect(),
            )
            .unwrap(),
        ];
        for w in &polys {
            let cell = w.diameter() / 256.0;
            let r = rasterize(w, cell).unwrap();
            let approx = r.defined_count() as f64 * cell * cell;
            assert!((approx - w.area()).abs() / w.area() < 0.01);
        }
    }

    #[test]
    fn normalized_spans_unit_interval() {
        let mut r = rasterize(&Window::unit_square(), 0.25).unwrap();
        for (i, v) in r.values_mut().iter_mut().enumerate() {
            *v = i as f64 * 3.0 + 1.0;
        }
        let n = r.normalized();
        assert_eq!(n.min_max(), Some((0.0, 1.0)));
    }
}
