mod common;

use ppfit::covariates::CovariateStack;
use ppfit::geom::rasterize;
use ppfit::pipeline::{fit_pattern, FitConfig};
use ppfit::quadrature::{build_grid_scheme, deviance, DummyMode};
use ppfit::rng::derive_seed;
use ppfit::sim_eval::{
    simulate_poisson, split_train_test, stability_eval, Intensity, StabilityOptions,
};
use ppfit::smoothing::{kernel_intensity, KernelSpec};
use ppfit::{Point, Window};

#[test]
fn kernel_estimate_recovers_planted_intensity() {
    let w = Window::unit_square();
    let grid = rasterize(&w, 1.0 / 64.0).unwrap();
    let rho =
        |p: Point| 3000.0 * (0.5 + (-((p.x - 0.4).powi(2) + (p.y - 0.6).powi(2)) / 0.08).exp());
    let x = simulate_poisson(
        &Intensity::Function {
            rho: &rho,
            bound: 4500.0,
        },
        &w,
        1,
    )
    .unwrap();
    assert!(x.len() >= 2000);
    let est = kernel_intensity(&x, &w, KernelSpec::new(0.05).unwrap(), &grid).unwrap();
    let truth = grid.from_fn_like(|i| Some(rho(grid.center_of(i))));
    let l1: f64 = est
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let total: f64 = truth.values().iter().sum();
    assert!(l1 / total < 0.15, "normalized L1 {}", l1 / total);
}

#[test]
fn cv_model_beats_intercept_on_test_split() {
    let sc = common::planted(2000.0, 21);
    let cfg = |seed| FitConfig {
        tiles_per_side: 40,
        path_length: 40,
        folds: 5,
        seed,
        ..FitConfig::default()
    };
    let mut wins = 0;
    for rep in 0..100u64 {
        let x = simulate_poisson(
            &Intensity::Raster(&sc.intensity),
            &sc.window,
            derive_seed(77, rep),
        )
        .unwrap();
        let (train, test) = split_train_test(&x, 0.7, rep).unwrap();
        let fit = fit_pattern(&train, &sc.window, &sc.stack, &sc.grid, &cfg(rep)).unwrap();
        let q = build_grid_scheme(&test, &sc.window, 40, DummyMode::Systematic, 0).unwrap();
        let z = sc.stack.eval_at(q.points()).unwrap();
        let scale = test.len() as f64 / train.len() as f64;
        let (b0, beta) = fit.path.coefficients(fit.index_opt());
        let mu: Vec<f64> = z
            .linear_predictor(b0, beta)
            .iter()
            .map(|e| scale * e.exp())
            .collect();
        let (n0, _) = fit.path.coefficients(0);
        let mu0 = vec![scale * n0.exp(); q.len()];
        if deviance(&q, &mu).unwrap() < deviance(&q, &mu0).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 95, "CV model better in {wins}/100");
}

#[test]
fn stability_report_is_reproducible() {
    let w = Window::unit_square();
    let grid = rasterize(&w, 0.1).unwrap();
    let rho = |p: Point| 200.0 + 300.0 * p.y;
    let x = simulate_poisson(
        &Intensity::Function {
            rho: &rho,
            bound: 500.0,
        },
        &w,
        4,
    )
    .unwrap();
    let mut stack = CovariateStack::new();
    stack.push_coordinates("x", "y").unwrap();
    let cfg = FitConfig {
        tiles_per_side: 16,
        path_length: 20,
        folds: 4,
        ..FitConfig::default()
    };
    let opts = StabilityOptions {
        replicates: 4,
        fraction: 0.6,
        seed: 3,
        raw_scale: true,
    };
    let a = stability_eval(&x, &w, &stack, &grid, &cfg, &opts).unwrap();
    let b = stability_eval(&x, &w, &stack, &grid, &cfg, &opts).unwrap();
    assert_eq!(a, b);
    assert!(a.dense.mean_mae > 0.0);
    for i in a.dense.mae.defined_indices() {
        assert!(a.dense.q05.values()[i] <= a.dense.q95.values()[i]);
    }
}
