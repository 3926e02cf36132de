#![allow(dead_code)]

use ppfit::rng::{derive_seed, rng};
use ppfit::Design;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Synthetic quadrature-style problem: `m` rows of Gaussian covariates, unit
/// total weight, about a fifth of the rows carrying an event whose
/// probability depends on the first `active` columns.
pub struct Synthetic {
    pub weights: Vec<f64>,
    pub responses: Vec<f64>,
    pub is_event: Vec<bool>,
    pub design: Design,
}

pub fn synthetic(m: usize, k: usize, active: usize, seed: u64) -> Synthetic {
    let mut r = rng(derive_seed(seed, 17));
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..m).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect();
    let w = 1.0 / m as f64;
    let mut weights = vec![w; m];
    let mut responses = vec![0.0; m];
    let mut is_event = vec![false; m];
    for j in 0..m {
        let eta: f64 = -1.5
            + (0..active.min(k))
                .map(|c| if c % 2 == 0 { 0.8 } else { -0.6 } * cols[c][j])
                .sum::<f64>();
        let p = 1.0 / (1.0 + (-eta).exp());
        if r.random::<f64>() < p {
            is_event[j] = true;
            // events carry a smaller weight, as in a tile shared with dummies
            weights[j] = 0.5 * w;
            responses[j] = 1.0 / weights[j];
        }
    }
    let names = (0..k).map(|c| format!("z{c}")).collect();
    Synthetic {
        weights,
        responses,
        is_event,
        design: Design::from_columns(names, cols).unwrap(),
    }
}

use ppfit::covariates::CovariateStack;
use ppfit::geom::rasterize;
use ppfit::{Point, Raster, Window};

/// Ten smooth standardized covariate rasters on the unit square and the
/// intensity `exp(β0 + z9 − z10)` scaled to about `n` expected events.
pub struct Planted {
    pub window: Window,
    pub grid: Raster,
    pub stack: CovariateStack,
    pub intensity: Raster,
}

pub fn planted(n: f64, seed: u64) -> Planted {
    let window = Window::unit_square();
    let grid = rasterize(&window, 1.0 / 64.0).unwrap();
    let mut r = rng(derive_seed(seed, 5));
    let mut stack = CovariateStack::new();
    let mut cols = Vec::new();
    for c in 0..10 {
        let bumps: Vec<(Point, f64, f64)> = (0..6)
            .map(|_| {
                (
                    Point::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0)),
                    r.random_range(0.1..0.3),
                    r.random_range(-1.0..1.0),
                )
            })
            .collect();
        let raw = grid.from_fn_like(|i| {
            let p = grid.center_of(i);
            Some(
                bumps
                    .iter()
                    .map(|(b, s, a)| a * (-p.dist_sq(b) / (2.0 * s * s)).exp())
                    .sum(),
            )
        });
        let v = raw.defined_values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        let std = grid.from_fn_like(|i| Some((raw.values()[i] - mean) / sd));
        cols.push(std.clone());
        stack.push_raster(&format!("z{}", c + 1), std).unwrap();
    }
    let eta = grid.from_fn_like(|i| Some(cols[8].values()[i] - cols[9].values()[i]));
    let mass: f64 =
        eta.defined_values().iter().map(|e| e.exp()).sum::<f64>() * grid.cell() * grid.cell();
    let b0 = (n / mass).ln();
    let intensity = grid.from_fn_like(|i| Some((b0 + eta.values()[i]).exp()));
    Planted {
        window,
        grid,
        stack,
        intensity,
    }
}
