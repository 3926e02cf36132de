//! Elastic-net penalized Poisson regression by cyclic coordinate descent.
//!
//! The penalized objective is
//!
//! ```text
//! P(θ) = −(1/m) Σ_j w_j (y_j η_j − exp η_j) + λ Σ_k ( ½(1−α) β_k² + α|β_k| )
//! ```
//!
//! Each outer iteration forms the IRLS working response
//! `y*_j = η_j + y_j/exp(η_j) − 1` and weights `u_j = w_j exp(η_j)`, then runs
//! coordinate descent on the penalized weighted least-squares model with
//! soft-thresholded updates. The intercept is never penalized. A backtracking
//! step keeps the objective non-increasing across outer iterations.

use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateStack, Standardization};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::geom::Raster;
use crate::quadrature::{deviance_rows, ETA_CLAMP};
use crate::rng::derive_seed;

pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_PATH_LENGTH: usize = 100;
pub const DEFAULT_FOLDS: usize = 10;
/// α used to size λ_max when α = 0.
pub const RIDGE_SURROGATE_ALPHA: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub alpha: f64,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { alpha, lambda })
    }

    pub fn penalty(&self, beta: &[f64]) -> f64 {
        self.lambda
            * beta
                .iter()
                .map(|b| 0.5 * (1.0 - self.alpha) * b * b + self.alpha * b.abs())
                .sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative objective change for outer convergence; also scales the
    /// inner coefficient-change threshold.
    pub tol: f64,
    pub max_outer: usize,
    /// Cap on coordinate sweeps per inner solve.
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_outer: 100,
            max_sweeps: 100_000,
        }
    }
}

/// A weighted Poisson regression problem: quadrature weights, responses and
/// a (standardized) design.
#[derive(Clone, Copy, Debug)]
pub struct PoissonProblem<'a> {
    pub weights: &'a [f64],
    pub responses: &'a [f64],
    pub design: &'a Design,
}

impl<'a> PoissonProblem<'a> {
    pub fn new(weights: &'a [f64], responses: &'a [f64], design: &'a Design) -> Result<Self> {
        if weights.len() != design.nrows() || responses.len() != design.nrows() {
            return Err(Error::Input(format!(
                "problem has {} weights, {} responses and {} design rows",
                weights.len(),
                responses.len(),
                design.nrows()
            )));
        }
        if design.nrows() == 0 {
            return Err(Error::Input("problem has no rows".into()));
        }
        Ok(Self {
            weights,
            responses,
            design,
        })
    }

    pub fn from_scheme(
        q: &'a crate::quadrature::QuadratureScheme,
        design: &'a Design,
    ) -> Result<Self> {
        Self::new(q.weights(), q.responses(), design)
    }

    pub fn m(&self) -> usize {
        self.design.nrows()
    }

    pub fn k(&self) -> usize {
        self.design.ncols()
    }

    pub fn loglik(&self, eta: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((&w, &y), &e) in self.weights.iter().zip(self.responses).zip(eta) {
            let e = e.clamp(-ETA_CLAMP, ETA_CLAMP);
            s += w * (y * e - e.exp());
        }
        s
    }

    /// Penalized objective at linear predictor `eta` and coefficients `beta`.
    pub fn objective(&self, eta: &[f64], beta: &[f64], spec: PenaltySpec) -> f64 {
        -self.loglik(eta) / self.m() as f64 + spec.penalty(beta)
    }

    pub fn deviance(&self, eta: &[f64]) -> Result<f64> {
        let mu: Vec<f64> = eta
            .iter()
            .map(|e| e.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
            .collect();
        deviance_rows(self.weights, self.responses, &mu)
    }

    /// Intercept-only weighted Poisson MLE, `log(Σ w y / Σ w)`.
    pub fn null_intercept(&self) -> Result<f64> {
        let wy: f64 = self
            .weights
            .iter()
            .zip(self.responses)
            .map(|(w, y)| w * y)
            .sum();
        let w: f64 = self.weights.iter().sum();
        if !(wy > 0.0) {
            return Err(Error::Numerical("no events among the fitted rows".into()));
        }
        Ok((wy / w).ln())
    }

    /// Penalized-objective gradient `(1/m) Σ w_j z_kj (y_j − μ_j)` for each column.
    pub fn score(&self, eta: &[f64]) -> Vec<f64> {
        let resid: Vec<f64> = self
            .weights
            .iter()
            .zip(self.responses)
            .zip(eta)
            .map(|((&w, &y), &e)| w * (y - e.clamp(-ETA_CLAMP, ETA_CLAMP).exp()))
            .collect();
        let m = self.m() as f64;
        self.design
            .columns()
            .map(|z| z.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / m)
            .collect()
    }
}

/// Coefficients and fitted values at one penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub objective: f64,
    pub outer_iterations: usize,
    /// Penalized objective at the start and after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl FitState {
    /// State at the given coefficients.
    pub fn at(problem: &PoissonProblem<'_>, beta0: f64, beta: Vec<f64>, spec: PenaltySpec) -> Self {
        let eta = problem.design.linear_predictor(beta0, &beta);
        let mu = eta
            .iter()
            .map(|e| e.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
            .collect();
        let objective = problem.objective(&eta, &beta, spec);
        Self {
            beta0,
            beta,
            eta,
            mu,
            objective,
            outer_iterations: 0,
            objective_trace: vec![objective],
            converged: false,
        }
    }

    /// Intercept-only state at the null MLE.
    pub fn null(problem: &PoissonProblem<'_>, spec: PenaltySpec) -> Result<Self> {
        Ok(Self::at(
            problem,
            problem.null_intercept()?,
            vec![0.0; problem.k()],
            spec,
        ))
    }

    pub fn nnz(&self) -> usize {
        self.beta.iter().filter(|&&b| b != 0.0).count()
    }
}

/// IRLS working response and weights at linear predictor `eta`:
/// `y* = η + y/exp(η) − 1`, `u = w exp(η)`.
pub fn irls_working(weights: &[f64], responses: &[f64], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ystar = Vec::with_capacity(eta.len());
    let mut u = Vec::with_capacity(eta.len());
    for ((&w, &y), &e) in weights.iter().zip(responses).zip(eta) {
        let e = e.clamp(-ETA_CLAMP, ETA_CLAMP);
        let mu = e.exp();
        ystar.push(e + y / mu - 1.0);
        u.push(w * mu);
    }
    (ystar, u)
}

/// `sign(z) · max(|z| − ϑ, 0)`.
pub fn soft_threshold(z: f64, theta: f64) -> f64 {
    if z > theta {
        z - theta
    } else if z < -theta {
        z + theta
    } else {
        0.0
    }
}

/// Fraction of the covariance-mode setup cost spent on naive sweeps before
/// switching.
const SWITCH_SHARE: f64 = 0.5;

/// Gradient bookkeeping for covariance-mode updates: `g_k = (1/m) Σ u z_k r`
/// is maintained through cached weighted inner products, so a coordinate
/// update costs `O(K)` instead of `O(m)`.
struct Covariance {
    g: Vec<f64>,
    /// `Σ u r`.
    rsum: f64,
    /// `(1/m) Σ u z_k`.
    umean: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
}

/// Coordinate descent on the penalized weighted least-squares model
/// `(1/2m) Σ u_j (y*_j − η_j)² + penalty`.
struct WeightedCd<'a> {
    design: &'a Design,
    u: &'a [f64],
    m: f64,
    sum_u: f64,
    xvar: Vec<f64>,
    l1: f64,
    l2: f64,
    /// `r = y* − η`; stale once `cov` is set.
    resid: Vec<f64>,
    cov: Option<Covariance>,
}

impl<'a> WeightedCd<'a> {
    fn new(design: &'a Design, u: &'a [f64], resid: Vec<f64>, spec: PenaltySpec) -> Self {
        let m = design.nrows() as f64;
        let xvar = design
            .columns()
            .map(|z| z.iter().zip(u).map(|(a, b)| b * a * a).sum::<f64>() / m)
            .collect();
        Self {
            design,
            u,
            m,
            sum_u: u.iter().sum(),
            xvar,
            l1: spec.lambda * spec.alpha,
            l2: spec.lambda * (1.0 - spec.alpha),
            resid,
            cov: None,
        }
    }

    fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(self.u)
            .map(|((x, y), w)| w * x * y)
            .sum::<f64>()
            / self.m
    }

    fn enter_covariance_mode(&mut self) {
        let g = self
            .design
            .columns()
            .map(|z| self.weighted_dot(z, &self.resid))
            .collect();
        let rsum = self.resid.iter().zip(self.u).map(|(r, w)| r * w).sum();
        let umean = self
            .design
            .columns()
            .map(|z| z.iter().zip(self.u).map(|(a, w)| a * w).sum::<f64>() / self.m)
            .collect();
        self.cov = Some(Covariance {
            g,
            rsum,
            umean,
            gram: vec![None; self.design.ncols()],
        });
    }

    /// One pass over the intercept and `coords`; returns the largest change.
    fn sweep(&mut self, coords: &[usize], beta0: &mut f64, beta: &mut [f64]) -> f64 {
        let (design, u, m) = (self.design, self.u, self.m);
        match &mut self.cov {
            None => {
                let shift = self.resid.iter().zip(u).map(|(r, w)| r * w).sum::<f64>() / self.sum_u;
                if shift != 0.0 {
                    *beta0 += shift;
                    self.resid.iter_mut().for_each(|r| *r -= shift);
                }
                let mut max_change = shift.abs();
                for &j in coords {
                    let z = design.col(j);
                    let old = beta[j];
                    let grad = z
                        .iter()
                        .zip(&self.resid)
                        .zip(u)
                        .map(|((a, r), w)| w * a * r)
                        .sum::<f64>()
                        / m
                        + self.xvar[j] * old;
                    let new = soft_threshold(grad, self.l1) / (self.xvar[j] + self.l2);
                    if new != old {
                        let delta = new - old;
                        beta[j] = new;
                        for (r, a) in self.resid.iter_mut().zip(z) {
                            *r -= delta * a;
                        }
                        max_change = max_change.max(delta.abs());
                    }
                }
                max_change
            }
            Some(c) => {
                let shift = c.rsum / self.sum_u;
                if shift != 0.0 {
                    *beta0 += shift;
                    c.rsum -= shift * self.sum_u;
                    for (g, um) in c.g.iter_mut().zip(&c.umean) {
                        *g -= shift * um;
                    }
                }
                let mut max_change = shift.abs();
                for &j in coords {
                    let old = beta[j];
                    let grad = c.g[j] + self.xvar[j] * old;
                    let new = soft_threshold(grad, self.l1) / (self.xvar[j] + self.l2);
                    if new != old {
                        let delta = new - old;
                        beta[j] = new;
                        let col = c.gram[j].get_or_insert_with(|| {
                            let zj = design.col(j);
                            design
                                .columns()
                                .map(|zk| {
                                    zj.iter()
                                        .zip(zk)
                                        .zip(u)
                                        .map(|((a, b), w)| w * a * b)
                                        .sum::<f64>()
                                        / m
                                })
                                .collect()
                        });
                        for (g, gj) in c.g.iter_mut().zip(col.iter()) {
                            *g -= delta * gj;
                        }
                        c.rsum -= delta * m * c.umean[j];
                        max_change = max_change.max(delta.abs());
                    }
                }
                max_change
            }
        }
    }

    /// Runs full sweeps alternating with active-set sweeps until a full
    /// sweep changes no coefficient by more than `tol·max(1, ‖β‖∞)`. Switches
    /// to covariance updates once the naive sweeps have cost a fixed share of
    /// what the switch costs.
    fn solve(
        &mut self,
        beta0: &mut f64,
        beta: &mut [f64],
        tol: f64,
        max_sweeps: usize,
    ) -> (usize, bool) {
        let k = beta.len();
        let all: Vec<usize> = (0..k).collect();
        let mut sweeps = 0;
        let mut work = 0usize;
        let thresh = |beta: &[f64]| tol * beta.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let mut run = |cd: &mut Self, coords: &[usize], beta0: &mut f64, beta: &mut [f64]| {
            if cd.cov.is_none() {
                let active = beta.iter().filter(|&&b| b != 0.0).count();
                if work as f64 >= SWITCH_SHARE * ((2 + active) * k) as f64 {
                    cd.enter_covariance_mode();
                }
                work += coords.len() + 1;
            }
            cd.sweep(coords, beta0, beta)
        };
        loop {
            let change = run(self, &all, beta0, beta);
            sweeps += 1;
            if change < thresh(beta) {
                return (sweeps, true);
            }
            if sweeps >= max_sweeps {
                return (sweeps, false);
            }
            let active: Vec<usize> = (0..k).filter(|&j| beta[j] != 0.0).collect();
            loop {
                let change = run(self, &active, beta0, beta);
                sweeps += 1;
                if change < thresh(beta) || sweeps >= max_sweeps {
                    break;
                }
            }
        }
    }
}

/// Solves the penalized problem at one `(α, λ)` starting from `warm`.
pub fn cd_solve(
    problem: &PoissonProblem<'_>,
    spec: PenaltySpec,
    warm: &FitState,
    opts: &SolverOptions,
) -> Result<FitState> {
    if warm.beta.len() != problem.k() {
        return Err(Error::Input(format!(
            "warm start has {} coefficients, design has {}",
            warm.beta.len(),
            problem.k()
        )));
    }
    if !warm.beta0.is_finite() || warm.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("warm start is not finite".into()));
    }
    let design = problem.design;
    let mut beta0 = warm.beta0;
    let mut beta = warm.beta.clone();
    let mut eta = design.linear_predictor(beta0, &beta);
    let mut obj = problem.objective(&eta, &beta, spec);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let (ystar, u) = irls_working(problem.weights, problem.responses, &eta);
        let resid: Vec<f64> = ystar.iter().zip(&eta).map(|(a, b)| a - b).collect();
        let (mut new_b0, mut new_beta) = (beta0, beta.clone());
        let (_, inner_ok) = WeightedCd::new(design, &u, resid, spec).solve(
            &mut new_b0,
            &mut new_beta,
            opts.tol,
            opts.max_sweeps,
        );
        let mut new_eta = design.linear_predictor(new_b0, &new_beta);
        let mut new_obj = problem.objective(&new_eta, &new_beta, spec);
        // backtrack toward the previous iterate if the full step overshoots
        let mut t = 1.0;
        while !(new_obj <= obj + 1e-12 * obj.abs()) && t > 1e-10 {
            t *= 0.5;
            new_b0 = beta0 + t * (new_b0 - beta0);
            for (nb, b) in new_beta.iter_mut().zip(&beta) {
                *nb = b + t * (*nb - b);
            }
            new_eta = design.linear_predictor(new_b0, &new_beta);
            new_obj = problem.objective(&new_eta, &new_beta, spec);
        }
        if !new_obj.is_finite() {
            return Err(Error::Numerical(format!(
                "objective diverged at λ = {} (outer iteration {outer})",
                spec.lambda
            )));
        }
        let step = new_beta
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold((new_b0 - beta0).abs(), f64::max);
        let improved = new_obj <= obj;
        let rel = (obj - new_obj).abs() / new_obj.abs().max(f64::MIN_POSITIVE);
        if improved {
            beta0 = new_b0;
            beta = new_beta;
            eta = new_eta;
            obj = new_obj;
        }
        trace.push(obj);
        let scale = beta.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        if inner_ok && (rel < opts.tol || !improved) && step < opts.tol.sqrt() * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "coordinate descent did not converge at λ = {} after {outer} outer iterations",
            spec.lambda
        );
    }
    let mu = eta
        .iter()
        .map(|e| e.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
        .collect();
    Ok(FitState {
        beta0,
        beta,
        eta,
        mu,
        objective: obj,
        outer_iterations: outer,
        objective_trace: trace,
        converged,
    })
}

/// Largest violation of the elastic-net optimality conditions at `state`.
///
/// For `β_k = 0` the score must satisfy `|g_k| ≤ λα`; for `β_k ≠ 0`,
/// `g_k − λ(1−α)β_k − λα sign(β_k) = 0`. The intercept score must vanish.
pub fn kkt_violation(problem: &PoissonProblem<'_>, state: &FitState, spec: PenaltySpec) -> f64 {
    let g = problem.score(&state.eta);
    let m = problem.m() as f64;
    let g0: f64 = problem
        .weights
        .iter()
        .zip(problem.responses)
        .zip(&state.mu)
        .map(|((w, y), mu)| w * (y - mu))
        .sum::<f64>()
        / m;
    let l1 = spec.lambda * spec.alpha;
    let l2 = spec.lambda * (1.0 - spec.alpha);
    g.iter()
        .zip(&state.beta)
        .map(|(&gk, &b)| {
            if b == 0.0 {
                (gk.abs() - l1).max(0.0)
            } else {
                (gk - l2 * b - l1 * b.signum()).abs()
            }
        })
        .fold(g0.abs(), f64::max)
}

/// Smallest λ at which every penalized coefficient is zero, computed at the
/// intercept-only fit.
pub fn lambda_max(problem: &PoissonProblem<'_>, alpha: f64) -> Result<f64> {
    let b0 = problem.null_intercept()?;
    let eta = vec![b0; problem.m()];
    let (ystar, u) = irls_working(problem.weights, problem.responses, &eta);
    let sum_u: f64 = u.iter().sum();
    let ybar = ystar.iter().zip(&u).map(|(y, w)| y * w).sum::<f64>() / sum_u;
    let m = problem.m() as f64;
    let max_grad = problem
        .design
        .columns()
        .map(|z| {
            (z.iter()
                .zip(&ystar)
                .zip(&u)
                .map(|((a, y), w)| w * a * (y - ybar))
                .sum::<f64>()
                / m)
                .abs()
        })
        .fold(0.0, f64::max);
    let a = if alpha > 0.0 {
        alpha
    } else {
        RIDGE_SURROGATE_ALPHA
    };
    Ok(max_grad / a)
}

/// Geometric λ sequence of length `t` from λ_max down to `ratio · λ_max`.
/// `ratio = None` picks 1e-4, or 1e-2 when there are at least as many
/// columns as rows.
pub fn lambda_path(
    problem: &PoissonProblem<'_>,
    alpha: f64,
    t: usize,
    ratio: Option<f64>,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::Config("path length must be at least 1".into()));
    }
    let ratio = ratio.unwrap_or(if problem.k() >= problem.m() {
        1e-2
    } else {
        1e-4
    });
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "lambda ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let lmax = lambda_max(problem, alpha)?.max(1e-300);
    if t == 1 {
        return Ok(vec![lmax]);
    }
    Ok((0..t)
        .map(|i| lmax * ratio.powf(i as f64 / (t - 1) as f64))
        .collect())
}

/// Cross-validation summary over the λ path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub folds: usize,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Held-out deviance per fold (outer) and λ (inner).
    pub fold_deviance: Vec<Vec<f64>>,
    pub index_opt: usize,
    pub index_1se: usize,
    pub lambda_opt: f64,
    pub lambda_1se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPath {
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    /// Original-scale covariate names.
    pub names: Vec<String>,
    /// Original-scale `[β0, β1..βK]` per λ.
    pub coefs: Vec<Vec<f64>>,
    /// Standardized-scale `[β0, β…]` per λ (kept columns only).
    pub coefs_std: Vec<Vec<f64>>,
    pub train_deviance: Vec<f64>,
    pub nnz: Vec<usize>,
    pub converged: Vec<bool>,
    pub cv: Option<CvTable>,
}

impl FitPath {
    /// Intercept and original-scale coefficients at path index `i`.
    pub fn coefficients(&self, i: usize) -> (f64, &[f64]) {
        (self.coefs[i][0], &self.coefs[i][1..])
    }

    pub fn lambda_opt(&self) -> Option<f64> {
        self.cv.as_ref().map(|c| c.lambda_opt)
    }

    pub fn lambda_1se(&self) -> Option<f64> {
        self.cv.as_ref().map(|c| c.lambda_1se)
    }

    /// Attaches a CV table computed on the same λ grid, moving λ_1se to the
    /// sparsest path model within one standard error at or above λ_opt.
    pub fn attach_cv(&mut self, mut cv: CvTable) -> Result<()> {
        if cv.mean.len() != self.lambdas.len() {
            return Err(Error::Input("CV table does not match the path".into()));
        }
        cv.index_1se = one_se_index(&cv.mean, &cv.se, cv.index_opt, Some(&self.nnz));
        cv.lambda_1se = self.lambdas[cv.index_1se];
        self.cv = Some(cv);
        Ok(())
    }
}

/// One-standard-error choice among path indices `0..=index_opt` whose mean is
/// within `se[index_opt]` of the minimum. With `nnz`, the sparsest such model
/// wins (ties go to the larger λ); without it, the largest such λ.
pub fn one_se_index(mean: &[f64], se: &[f64], index_opt: usize, nnz: Option<&[usize]>) -> usize {
    let bound = mean[index_opt] + se[index_opt];
    let mut within = (0..=index_opt).filter(|&i| mean[i] <= bound);
    match nnz {
        None => within.next().unwrap_or(index_opt),
        Some(nnz) => within.fold(index_opt, |best, i| {
            if nnz[i] < nnz[best] || (nnz[i] == nnz[best] && i < best) {
                i
            } else {
                best
            }
        }),
    }
}

/// Warm-started solves along `lambdas`, returning standardized-scale states.
pub fn solve_path(
    problem: &PoissonProblem<'_>,
    alpha: f64,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<FitState>> {
    let first = PenaltySpec::new(alpha, lambdas.first().copied().unwrap_or(0.0))?;
    let mut warm = FitState::null(problem, first)?;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let spec = PenaltySpec::new(alpha, lambda)?;
        let state = cd_solve(problem, spec, &warm, opts)?;
        warm = state.clone();
        out.push(state);
    }
    Ok(out)
}

/// Fits the whole path. Coefficients are reported on the original covariate
/// scale when `standardization` is given.
pub fn fit_path(
    problem: &PoissonProblem<'_>,
    alpha: f64,
    lambdas: &[f64],
    opts: &SolverOptions,
    standardization: Option<&Standardization>,
) -> Result<FitPath> {
    let states = solve_path(problem, alpha, lambdas, opts)?;
    let names = match standardization {
        Some(s) => s.names.clone(),
        None => problem.design.names().to_vec(),
    };
    let mut path = FitPath {
        alpha,
        lambdas: lambdas.to_vec(),
        names,
        coefs: Vec::with_capacity(states.len()),
        coefs_std: Vec::with_capacity(states.len()),
        train_deviance: Vec::with_capacity(states.len()),
        nnz: Vec::with_capacity(states.len()),
        converged: Vec::with_capacity(states.len()),
        cv: None,
    };
    for s in states {
        let std_row: Vec<f64> = std::iter::once(s.beta0)
            .chain(s.beta.iter().copied())
            .collect();
        let orig_row = match standardization {
            Some(st) => {
                let (b0, b) = st.to_original(s.beta0, &s.beta);
                std::iter::once(b0).chain(b).collect()
            }
            None => std_row.clone(),
        };
        path.train_deviance.push(problem.deviance(&s.eta)?);
        path.nnz.push(s.nnz());
        path.converged.push(s.converged);
        path.coefs.push(orig_row);
        path.coefs_std.push(std_row);
    }
    Ok(path)
}

/// Assigns quadrature rows to folds, stratified by the event indicator.
pub fn assign_folds(is_event: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    use rand::seq::SliceRandom;
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    for attempt in 0..10u64 {
        let mut rng = crate::rng::rng(derive_seed(seed, attempt));
        let mut fold = vec![0usize; is_event.len()];
        for class in [true, false] {
            let mut rows: Vec<usize> = (0..is_event.len())
                .filter(|&j| is_event[j] == class)
                .collect();
            rows.shuffle(&mut rng);
            for (pos, j) in rows.into_iter().enumerate() {
                fold[j] = pos % folds;
            }
        }
        let mut events = vec![0usize; folds];
        for (j, &f) in fold.iter().enumerate() {
            if is_event[j] {
                events[f] += 1;
            }
        }
        if events.iter().all(|&c| c > 0) {
            return Ok(fold);
        }
    }
    Err(Error::Numerical(format!(
        "could not give every one of {folds} folds an event ({} events)",
        is_event.iter().filter(|&&a| a).count()
    )))
}

/// K-fold cross-validation of the path by held-out Poisson deviance.
///
/// λ_opt minimizes the mean held-out deviance (ties go to the larger λ);
/// λ_1se is the largest λ whose mean is within one standard error of it.
/// [`FitPath::attach_cv`] refines λ_1se using the path's sparsity.
pub fn cv_select(
    problem: &PoissonProblem<'_>,
    is_event: &[bool],
    alpha: f64,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvTable> {
    if is_event.len() != problem.m() {
        return Err(Error::Input(
            "event indicators do not match problem rows".into(),
        ));
    }
    let fold_of = assign_folds(is_event, folds, seed)?;
    let per_fold: Vec<Result<Vec<f64>>> = crate::par::map_range(folds, |f| {
        let train: Vec<usize> = (0..fold_of.len()).filter(|&j| fold_of[j] != f).collect();
        let test: Vec<usize> = (0..fold_of.len()).filter(|&j| fold_of[j] == f).collect();
        let pick = |v: &[f64], rows: &[usize]| rows.iter().map(|&j| v[j]).collect::<Vec<f64>>();
        let (w_tr, y_tr, z_tr) = (
            pick(problem.weights, &train),
            pick(problem.responses, &train),
            problem.design.select_rows(&train),
        );
        let (w_te, y_te, z_te) = (
            pick(problem.weights, &test),
            pick(problem.responses, &test),
            problem.design.select_rows(&test),
        );
        let sub = PoissonProblem::new(&w_tr, &y_tr, &z_tr)?;
        let states = solve_path(&sub, alpha, lambdas, opts)?;
        states
            .iter()
            .map(|s| {
                let eta = z_te.linear_predictor(s.beta0, &s.beta);
                let mu: Vec<f64> = eta
                    .iter()
                    .map(|e| e.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
                    .collect();
                deviance_rows(&w_te, &y_te, &mu)
            })
            .collect()
    });
    let fold_deviance = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    let t = lambdas.len();
    let kf = folds as f64;
    let mean: Vec<f64> = (0..t)
        .map(|i| fold_deviance.iter().map(|d| d[i]).sum::<f64>() / kf)
        .collect();
    let se: Vec<f64> = (0..t)
        .map(|i| {
            let var = fold_deviance
                .iter()
                .map(|d| (d[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (kf - 1.0);
            (var / kf).sqrt()
        })
        .collect();
    let index_opt = (0..t).fold(0, |best, i| if mean[i] < mean[best] { i } else { best });
    let index_1se = one_se_index(&mean, &se, index_opt, None);
    Ok(CvTable {
        folds,
        seed,
        mean,
        se,
        fold_deviance,
        index_opt,
        index_1se,
        lambda_opt: lambdas[index_opt],
        lambda_1se: lambdas[index_1se],
    })
}

/// Intensity `exp(β0 + z(c)β)` at every cell of `grid`, using original-scale
/// coefficients for the columns of `stack`. Cells outside the grid mask, or
/// where a covariate with a nonzero coefficient is undefined, are nodata. With `normalize`, the
/// surface is rescaled to `[0, 1]`.
pub fn predict_intensity(
    beta0: f64,
    beta: &[f64],
    stack: &CovariateStack,
    grid: &Raster,
    normalize: bool,
) -> Result<Raster> {
    if beta.len() != stack.len() {
        return Err(Error::Input(format!(
            "{} coefficients for {} covariates",
            beta.len(),
            stack.len()
        )));
    }
    let cols = stack.eval_grid(grid);
    let out = grid.from_fn_like(|i| {
        if !grid.is_defined(i) {
            return None;
        }
        let mut eta = beta0;
        for (b, col) in beta.iter().zip(&cols) {
            if *b != 0.0 {
                eta += b * col[i]?;
            }
        }
        Some(eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
    });
    Ok(if normalize { out.normalized() } else { out })
}
