//! Parallel vs sequential throughput of the data-parallel kernels.
//!
//! With the default `parallel` feature each workload runs inside a one-thread
//! rayon pool and inside the global pool. Built with `--no-default-features`
//! the same workloads run on the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ppfit::bandwidth::select_bandwidth;
use ppfit::geom::rasterize;
use ppfit::penfit::{cv_select, lambda_path, PoissonProblem, SolverOptions};
use ppfit::rng::rng;
use ppfit::smoothing::{kernel_intensity, KernelSpec};
use ppfit::{Design, Point, PointPattern, Window};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

struct Workloads {
    window: Window,
    pattern: PointPattern,
    weights: Vec<f64>,
    responses: Vec<f64>,
    is_event: Vec<bool>,
    design: Design,
    blobs: Vec<Vec<f64>>,
}

fn workloads() -> Workloads {
    let mut r = rng(1);
    let window = Window::unit_square();
    let pattern = PointPattern::new(
        (0..2000)
            .map(|_| Point::new(r.random::<f64>(), r.random::<f64>().powi(2)))
            .collect(),
    )
    .unwrap();

    let (m, k) = (4000, 30);
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..m).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect();
    let mut weights = vec![1.0 / m as f64; m];
    let mut responses = vec![0.0; m];
    let mut is_event = vec![false; m];
    for j in 0..m {
        let eta = -1.5 + 0.8 * cols[0][j] - 0.6 * cols[1][j];
        if r.random::<f64>() < 1.0 / (1.0 + (-eta).exp()) {
            is_event[j] = true;
            weights[j] *= 0.5;
            responses[j] = 1.0 / weights[j];
        }
    }
    let design = Design::from_columns((0..k).map(|c| format!("z{c}")).collect(), cols).unwrap();

    let noise = Normal::new(0.0, 1.0).unwrap();
    let blobs = (0..16)
        .flat_map(|b| {
            let (cx, cy) = ((b % 4) as f64 * 20.0, (b / 4) as f64 * 20.0);
            (0..50)
                .map(|_| vec![cx + noise.sample(&mut r), cy + noise.sample(&mut r)])
                .collect::<Vec<_>>()
        })
        .collect();
    Workloads {
        window,
        pattern,
        weights,
        responses,
        is_event,
        design,
        blobs,
    }
}

fn run_all(c: &mut Criterion, label: &str, exec: &dyn Fn(&mut (dyn FnMut() + Send))) {
    let w = workloads();
    let grid = rasterize(&w.window, 1.0 / 256.0).unwrap();
    let spec = KernelSpec::new(0.03).unwrap();
    let problem = PoissonProblem::new(&w.weights, &w.responses, &w.design).unwrap();
    let lambdas = lambda_path(&problem, 0.95, 30, None).unwrap();
    let opts = SolverOptions::default();

    let mut g = c.benchmark_group("kernel_intensity");
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter(label), |b| {
        b.iter(|| exec(&mut || drop(kernel_intensity(&w.pattern, &w.window, spec, &grid).unwrap())))
    });
    g.finish();

    let mut g = c.benchmark_group("cv_path");
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter(label), |b| {
        b.iter(|| {
            exec(&mut || {
                drop(cv_select(&problem, &w.is_event, 0.95, &lambdas, 5, 1, &opts).unwrap())
            })
        })
    });
    g.finish();

    let mut g = c.benchmark_group("select_bandwidth");
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter(label), |b| {
        b.iter(|| exec(&mut || drop(select_bandwidth(&w.blobs, 20, 1).unwrap())))
    });
    g.finish();
}

#[cfg(feature = "parallel")]
fn benches(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    run_all(c, "rayon-1-thread", &|f| single.install(f));
    let threads = rayon::current_num_threads();
    run_all(c, &format!("rayon-{threads}-threads"), &|f| f());
}

#[cfg(not(feature = "parallel"))]
fn benches(c: &mut Criterion) {
    run_all(c, "sequential", &|f| f());
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
