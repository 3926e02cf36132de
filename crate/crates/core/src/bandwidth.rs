//! K-means based bandwidth selection.
//!
//! Cluster counts `P = 1..=K_max+1` are fitted by Lloyd's algorithm, the
//! count maximizing the KL elbow index is selected, and the bandwidth is the
//! weighted harmonic mean of the per-cluster dispersions:
//!
//! ```text
//! σ_q² = 1/(2 n_q) Σ_{x∈C_q} ‖x − ϖ_q‖²
//! w_q  = 1 / ( 1/n Σ_i ‖x_i − ϖ_q‖² )
//! h    = sqrt( Σ w_q / Σ (w_q / σ_q²) )
//! ```

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Window;
use crate::rng::derive_seed;

/// Convergence threshold on the summed squared centroid shift.
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_K_MAX: usize = 30;
/// Independent k-means++ initializations per cluster count.
pub const RESTARTS: u64 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
    /// Trace of the within-cluster dispersion matrix.
    pub within_dispersion: f64,
    pub iterations: usize,
    /// Objective after each assignment step of the retained run.
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    #[serde(rename = "P0")]
    pub p0: usize,
    pub dim: usize,
    /// `(P, KL_P)` for `P = 2..=K_max`.
    pub kl_values: Vec<(usize, f64)>,
    /// `(P, D_P)` for `P = 1..=K_max+1`.
    pub dispersions: Vec<(usize, f64)>,
    pub sigma_sq: Vec<f64>,
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    /// Clusters left out of the bandwidth because `σ_q² = 0`.
    pub excluded_singletons: usize,
    pub h: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (q, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

fn validate(data: &[Vec<f64>]) -> Result<usize> {
    let dim = data.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Input("k-means needs nonempty observations".into()));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::Input(format!(
                "observation {i} has dimension {}, expected {dim}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("observation {i} is not finite")));
        }
    }
    Ok(dim)
}

fn mean(data: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; data[0].len()];
    for x in data {
        for (mi, xi) in m.iter_mut().zip(x) {
            *mi += xi;
        }
    }
    let n = data.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn plusplus_init(data: &[Vec<f64>], p: usize, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < p {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].clone();
        for (di, x) in d2.iter_mut().zip(data) {
            *di = di.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Assigns points to nearest centroids, then gives every empty cluster the
/// point farthest from its current centroid.
fn assign_with_repair(
    data: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignment: &mut [usize],
) -> f64 {
    let p = centroids.len();
    let mut dist = vec![0.0; data.len()];
    let mut counts = vec![0usize; p];
    for (i, x) in data.iter().enumerate() {
        let (q, d) = nearest(x, centroids);
        assignment[i] = q;
        dist[i] = d;
        counts[q] += 1;
    }
    for q in 0..p {
        if counts[q] > 0 {
            continue;
        }
        let donor = (0..data.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        if let Some(i) = donor {
            counts[assignment[i]] -= 1;
            assignment[i] = q;
            counts[q] = 1;
            dist[i] = 0.0;
            centroids[q] = data[i].clone();
        }
    }
    dist.iter().sum()
}

fn update_centroids(
    data: &[Vec<f64>],
    assignment: &[usize],
    p: usize,
    previous: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let dim = data[0].len();
    let mut sums = vec![vec![0.0; dim]; p];
    let mut counts = vec![0usize; p];
    for (x, &q) in data.iter().zip(assignment) {
        counts[q] += 1;
        for (s, v) in sums[q].iter_mut().zip(x) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(q, (s, c))| {
            if c == 0 {
                previous[q].clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect()
}

fn lloyd(
    data: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    eps: f64,
    max_iter: usize,
) -> KMeansResult {
    let p = centroids.len();
    let mut assignment = vec![0usize; data.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations <= max_iter {
        trace.push(assign_with_repair(data, &mut centroids, &mut assignment));
        let updated = update_centroids(data, &assignment, p, &centroids);
        let shift: f64 = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b))
            .sum();
        centroids = updated;
        iterations += 1;
        if shift <= eps {
            break;
        }
    }
    assign_with_repair(data, &mut centroids, &mut assignment);
    centroids = update_centroids(data, &assignment, p, &centroids);
    let mut counts = vec![0usize; p];
    let mut within = 0.0;
    for (x, &q) in data.iter().zip(&assignment) {
        counts[q] += 1;
        within += sq_dist(x, &centroids[q]);
    }
    KMeansResult {
        centroids,
        assignment,
        counts,
        within_dispersion: within,
        iterations,
        objective_trace: trace,
    }
}

/// Lloyd's k-means with k-means++ seeding and `RESTARTS` restarts, keeping the
/// run with the lowest within-cluster dispersion. `P = 1` returns the mean.
pub fn kmeans(
    data: &[Vec<f64>],
    p: usize,
    seed: u64,
    eps: f64,
    max_iter: usize,
) -> Result<KMeansResult> {
    validate(data)?;
    if p == 0 || p > data.len() {
        return Err(Error::Input(format!(
            "cannot form {p} clusters from {} observations",
            data.len()
        )));
    }
    if p == 1 {
        let c = mean(data);
        let within = data.iter().map(|x| sq_dist(x, &c)).sum();
        return Ok(KMeansResult {
            centroids: vec![c],
            assignment: vec![0; data.len()],
            counts: vec![data.len()],
            within_dispersion: within,
            iterations: 0,
            objective_trace: vec![within],
        });
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..RESTARTS {
        let mut rng = crate::rng::rng(derive_seed(seed, r));
        let init = plusplus_init(data, p, &mut rng);
        let run = lloyd(data, init, eps, max_iter);
        if best
            .as_ref()
            .is_none_or(|b| run.within_dispersion < b.within_dispersion)
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// KL elbow index at `P` from the dispersions at `P−1`, `P`, `P+1`.
/// A denominator below `1e-12` in magnitude yields 0.
pub fn kl_index(d_prev: f64, d_p: f64, d_next: f64, p: usize, d: usize) -> f64 {
    let e = 2.0 / d as f64;
    let pf = p as f64;
    let num = (pf - 1.0).powf(e) * d_prev - pf.powf(e) * d_p;
    let den = pf.powf(e) * d_p - (pf + 1.0).powf(e) * d_next;
    if den.abs() < 1e-12 {
        0.0
    } else {
        (num / den).abs()
    }
}

/// Weighted-harmonic-mean bandwidth from a clustering of `data`.
fn bandwidth_from_clusters(
    data: &[Vec<f64>],
    km: &KMeansResult,
) -> Result<(Vec<f64>, Vec<f64>, usize, f64)> {
    let n = data.len() as f64;
    let p = km.centroids.len();
    let mut ss = vec![0.0; p];
    for (x, &q) in data.iter().zip(&km.assignment) {
        ss[q] += sq_dist(x, &km.centroids[q]);
    }
    let sigma_sq: Vec<f64> = ss
        .iter()
        .zip(&km.counts)
        .map(|(s, &c)| s / (2.0 * c as f64))
        .collect();
    let weights: Vec<f64> = km
        .centroids
        .iter()
        .map(|c| {
            let g = data.iter().map(|x| sq_dist(x, c)).sum::<f64>() / n;
            1.0 / g
        })
        .collect();
    let (mut num, mut den, mut excluded) = (0.0, 0.0, 0);
    for (w, s2) in weights.iter().zip(&sigma_sq) {
        if *s2 > 0.0 && w.is_finite() {
            num += w;
            den += w / s2;
        } else {
            excluded += 1;
        }
    }
    if den == 0.0 {
        return Err(Error::Numerical(
            "every cluster has zero dispersion; choose a smaller K_max".into(),
        ));
    }
    Ok((sigma_sq, weights, excluded, (num / den).sqrt()))
}

/// Runs the full selector on `data` (rows of dimension `d`).
pub fn select_bandwidth(data: &[Vec<f64>], k_max: usize, seed: u64) -> Result<BandwidthReport> {
    let dim = validate(data)?;
    if data.len() < 3 {
        return Err(Error::Input(
            "bandwidth selection needs at least 3 observations".into(),
        ));
    }
    if k_max < 2 {
        return Err(Error::Config(format!(
            "K_max must be at least 2, got {k_max}"
        )));
    }
    if data.len() < k_max + 1 {
        return Err(Error::Input(format!(
            "K_max = {k_max} needs at least {} observations, got {}",
            k_max + 1,
            data.len()
        )));
    }
    let counts: Vec<usize> = (1..=k_max + 1).collect();
    let fits: Vec<Result<KMeansResult>> = crate::par::map_slice(&counts, |&p| {
        kmeans(
            data,
            p,
            derive_seed(seed, p as u64),
            DEFAULT_EPS,
            DEFAULT_MAX_ITER,
        )
    });
    let fits: Vec<KMeansResult> = fits.into_iter().collect::<Result<_>>()?;
    let disp: Vec<f64> = fits.iter().map(|f| f.within_dispersion).collect();
    let kl_values: Vec<(usize, f64)> = (2..=k_max)
        .map(|p| (p, kl_index(disp[p - 2], disp[p - 1], disp[p], p, dim)))
        .collect();
    let (p0, _) = kl_values
        .iter()
        .copied()
        .fold((2, f64::NEG_INFINITY), |best, (p, v)| {
            if v > best.1 {
                (p, v)
            } else {
                best
            }
        });
    let km = &fits[p0 - 1];
    let (sigma_sq, weights, excluded, h) = bandwidth_from_clusters(data, km)?;
    Ok(BandwidthReport {
        p0,
        dim,
        kl_values,
        dispersions: counts.iter().copied().zip(disp).collect(),
        sigma_sq,
        weights,
        counts: km.counts.clone(),
        excluded_singletons: excluded,
        h,
    })
}

/// Bandwidth from an explicit clustering; exposed for analytic checks.
pub fn bandwidth_for_clustering(data: &[Vec<f64>], km: &KMeansResult) -> Result<f64> {
    bandwidth_from_clusters(data, km).map(|(_, _, _, h)| h)
}

/// One tenth of the window's bounding-box diagonal.
pub fn default_segment_bandwidth(w: &Window) -> f64 {
    0.1 * w.diameter()
}

/// Observations for the selector from planar points.
pub fn points_as_rows(points: &[crate::geom::Point]) -> Vec<Vec<f64>> {
    points.iter().map(|p| vec![p.x, p.y]).collect()
}

/// One-dimensional observations (e.g. segment lengths).
pub fn values_as_rows(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|&v| vec![v]).collect()
}
