//! Grid-weighted quadrature for the Poisson point-process likelihood.
//!
//! Data and dummy points are merged into quadrature points `s_j` with weights
//! `w_j`, so the likelihood integral becomes a weighted Poisson GLM sum with
//! responses `y_j = a_j / w_j`.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::geom::{Point, PointPattern, Window};

/// Linear predictors are clamped to this magnitude before exponentiation.
pub const ETA_CLAMP: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DummyMode {
    /// One dummy at each tile center.
    Systematic,
    /// One dummy uniformly placed within each tile.
    Random,
}

impl std::str::FromStr for DummyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "systematic" => Ok(Self::Systematic),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown dummy mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureScheme {
    points: Vec<Point>,
    is_event: Vec<bool>,
    weights: Vec<f64>,
    responses: Vec<f64>,
    counts: Vec<usize>,
    tile_area: f64,
    tiles_per_side: usize,
}

impl QuadratureScheme {
    /// Assembles a scheme from raw parts; `y_j = a_j / w_j` is derived.
    pub fn from_parts(points: Vec<Point>, is_event: Vec<bool>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != is_event.len() || points.len() != weights.len() {
            return Err(Error::Input(
                "quadrature parts have mismatched lengths".into(),
            ));
        }
        if let Some(j) = weights.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Input(format!(
                "quadrature weight {j} is not positive"
            )));
        }
        let responses = is_event
            .iter()
            .zip(&weights)
            .map(|(&a, &w)| if a { 1.0 / w } else { 0.0 })
            .collect();
        let m = points.len();
        Ok(Self {
            points,
            is_event,
            weights,
            responses,
            counts: vec![1; m],
            tile_area: 0.0,
            tiles_per_side: 0,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn is_event(&self) -> &[bool] {
        &self.is_event
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Number of events and dummies sharing each point's tile.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn tile_area(&self) -> f64 {
        self.tile_area
    }

    pub fn tiles_per_side(&self) -> usize {
        self.tiles_per_side
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.is_event.iter().filter(|&&a| a).count()
    }

    pub fn n_dummies(&self) -> usize {
        self.len() - self.n_events()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Quadrature rows at `rows`, in order. Weights and responses are kept as-is.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            points: rows.iter().map(|&j| self.points[j]).collect(),
            is_event: rows.iter().map(|&j| self.is_event[j]).collect(),
            weights: rows.iter().map(|&j| self.weights[j]).collect(),
            responses: rows.iter().map(|&j| self.responses[j]).collect(),
            counts: rows.iter().map(|&j| self.counts[j]).collect(),
            tile_area: self.tile_area,
            tiles_per_side: self.tiles_per_side,
        }
    }

    /// Debug dump as CSV `x,y,a,w,y_resp`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "y", "a", "w", "y_resp"])?;
        for j in 0..self.len() {
            let p = self.points[j];
            wtr.write_record([
                p.x.to_string(),
                p.y.to_string(),
                u8::from(self.is_event[j]).to_string(),
                self.weights[j].to_string(),
                self.responses[j].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct TileGrid {
    x0: f64,
    y0: f64,
    tw: f64,
    th: f64,
    side: usize,
}

impl TileGrid {
    fn center(&self, t: usize) -> Point {
        let (row, col) = (t / self.side, t % self.side);
        Point::new(
            self.x0 + (col as f64 + 0.5) * self.tw,
            self.y0 + (row as f64 + 0.5) * self.th,
        )
    }

    fn tile_of(&self, p: Point) -> usize {
        let idx = |v: f64, origin: f64, size: f64| {
            (((v - origin) / size).floor().max(0.0) as usize).min(self.side - 1)
        };
        idx(p.y, self.y0, self.th) * self.side + idx(p.x, self.x0, self.tw)
    }
}

/// Builds the grid-weighted quadrature scheme.
///
/// The window's bounding box is cut into `tiles_per_side²` equal tiles; a tile
/// is in-window when its center is. Each in-window tile gets one dummy, every
/// quadrature point in a tile gets weight `Δ / E` with `Δ = |W| / #tiles` and
/// `E` the number of events plus dummies in the tile. Events are listed first,
/// in input order, followed by dummies in tile order.
pub fn build_grid_scheme(
    x: &PointPattern,
    w: &Window,
    tiles_per_side: usize,
    dummy_mode: DummyMode,
    seed: u64,
) -> Result<QuadratureScheme> {
    if tiles_per_side == 0 {
        return Err(Error::InvalidResolution(
            "tiles_per_side must be at least 1".into(),
        ));
    }
    x.check_inside(w)?;
    let (min, _) = w.bbox();
    let grid = TileGrid {
        x0: min.x,
        y0: min.y,
        tw: w.width() / tiles_per_side as f64,
        th: w.height() / tiles_per_side as f64,
        side: tiles_per_side,
    };
    let ntiles = tiles_per_side * tiles_per_side;
    let in_window: Vec<bool> = crate::par::map_range(ntiles, |t| w.contains(grid.center(t)));
    let in_tiles: Vec<usize> = (0..ntiles).filter(|&t| in_window[t]).collect();
    if in_tiles.is_empty() {
        return Err(Error::InvalidResolution(format!(
            "no tile center of a {tiles_per_side}x{tiles_per_side} grid lies inside the window"
        )));
    }
    let tile_area = w.area() / in_tiles.len() as f64;

    let event_tiles: Vec<usize> = x
        .points()
        .iter()
        .map(|&p| {
            let t = grid.tile_of(p);
            if in_window[t] {
                t
            } else {
                // edge digitization: attach to the nearest in-window tile
                *in_tiles
                    .iter()
                    .min_by(|&&a, &&b| {
                        p.dist_sq(&grid.center(a))
                            .total_cmp(&p.dist_sq(&grid.center(b)))
                    })
                    .expect("in_tiles is nonempty")
            }
        })
        .collect();

    let mut per_tile = vec![0usize; ntiles];
    for &t in &in_tiles {
        per_tile[t] = 1;
    }
    for &t in &event_tiles {
        per_tile[t] += 1;
    }

    let mut rng = crate::rng::rng(seed);
    let dummies: Vec<Point> = in_tiles
        .iter()
        .map(|&t| match dummy_mode {
            DummyMode::Systematic => grid.center(t),
            DummyMode::Random => random_dummy(&grid, t, w, &mut rng),
        })
        .collect();

    let m = x.len() + in_tiles.len();
    let mut points = Vec::with_capacity(m);
    let mut is_event = Vec::with_capacity(m);
    let mut counts = Vec::with_capacity(m);
    for (p, &t) in x.points().iter().zip(&event_tiles) {
        points.push(*p);
        is_event.push(true);
        counts.push(per_tile[t]);
    }
    for (p, &t) in dummies.iter().zip(&in_tiles) {
        points.push(*p);
        is_event.push(false);
        counts.push(per_tile[t]);
    }
    let weights: Vec<f64> = counts.iter().map(|&e| tile_area / e as f64).collect();
    let responses = is_event
        .iter()
        .zip(&weights)
        .map(|(&a, &wj)| if a { 1.0 / wj } else { 0.0 })
        .collect();
    Ok(QuadratureScheme {
        points,
        is_event,
        weights,
        responses,
        counts,
        tile_area,
        tiles_per_side,
    })
}

fn random_dummy(grid: &TileGrid, t: usize, w: &Window, rng: &mut crate::rng::Rng) -> Point {
    let c = grid.center(t);
    for _ in 0..100 {
        let p = Point::new(
            c.x + (rng.random::<f64>() - 0.5) * grid.tw,
            c.y + (rng.random::<f64>() - 0.5) * grid.th,
        );
        if w.contains(p) {
            return p;
        }
    }
    // fall back to the in-window point of a 5x5 sub-grid farthest from the boundary
    let mut best = c;
    let mut best_depth = w.boundary_distance(c);
    for i in 0..5 {
        for j in 0..5 {
            let p = Point::new(
                c.x + (i as f64 - 2.0) / 5.0 * grid.tw,
                c.y + (j as f64 - 2.0) / 5.0 * grid.th,
            );
            if w.contains(p) {
                let depth = w.boundary_distance(p);
                if depth > best_depth {
                    best = p;
                    best_depth = depth;
                }
            }
        }
    }
    best
}

/// `exp(eta)` with `eta` clamped to `±ETA_CLAMP`; returns whether clamping occurred.
pub fn clamped_exp(eta: f64) -> (f64, bool) {
    if eta > ETA_CLAMP {
        (ETA_CLAMP.exp(), true)
    } else if eta < -ETA_CLAMP {
        ((-ETA_CLAMP).exp(), true)
    } else {
        (eta.exp(), false)
    }
}

/// Weighted Poisson log-likelihood `Σ w_j (y_j η_j − exp η_j)` for a given
/// linear predictor.
pub fn loglik_eta(weights: &[f64], responses: &[f64], eta: &[f64]) -> f64 {
    let mut clamped = false;
    let mut total = 0.0;
    for ((&w, &y), &e) in weights.iter().zip(responses).zip(eta) {
        let e_c = e.clamp(-ETA_CLAMP, ETA_CLAMP);
        clamped |= e_c != e;
        total += w * (y * e_c - e_c.exp());
    }
    if clamped {
        log::warn!("linear predictor clamped to ±{ETA_CLAMP}; log-likelihood may be inaccurate");
    }
    total
}

/// Approximate log-likelihood of the log-linear intensity `exp(β0 + z β)`.
pub fn loglik(q: &QuadratureScheme, z: &Design, beta0: f64, beta: &[f64]) -> Result<f64> {
    if z.nrows() != q.len() {
        return Err(Error::Input(format!(
            "design has {} rows, scheme has {}",
            z.nrows(),
            q.len()
        )));
    }
    if beta.len() != z.ncols() {
        return Err(Error::Input(format!(
            "{} coefficients for {} columns",
            beta.len(),
            z.ncols()
        )));
    }
    if !beta0.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("coefficients must be finite".into()));
    }
    Ok(loglik_eta(
        q.weights(),
        q.responses(),
        &z.linear_predictor(beta0, beta),
    ))
}

/// Poisson deviance `2 Σ w_j [y_j log(y_j/μ_j) − (y_j − μ_j)]`, with `0 log 0 = 0`.
pub fn deviance_rows(weights: &[f64], responses: &[f64], mu: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (j, ((&w, &y), &m)) in weights.iter().zip(responses).zip(mu).enumerate() {
        if !(m > 0.0) {
            return Err(Error::Domain(format!(
                "fitted intensity at row {j} is not positive ({m})"
            )));
        }
        let ylog = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
        total += w * (ylog - (y - m));
    }
    Ok(2.0 * total)
}

pub fn deviance(q: &QuadratureScheme, mu: &[f64]) -> Result<f64> {
    if mu.len() != q.len() {
        return Err(Error::Input(format!(
            "{} fitted values for {} quadrature points",
            mu.len(),
            q.len()
        )));
    }
    deviance_rows(q.weights(), q.responses(), mu)
}
