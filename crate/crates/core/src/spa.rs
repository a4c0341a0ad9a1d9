//! Polytope fitting (SPA I), one-step propagators (SPA II) and the maps from
//! points to barycentric coordinates.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::simplex::{is_stochastic, ColumnStochasticMatrix};
use crate::solver::{fit_column_stochastic, FitOptions, InnerOptions, SimplexLeastSquares};

pub use crate::solver::StochasticFit;

/// Solver settings shared by the alternating and propagator solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaIIConfig {
    /// Relative objective decrease below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for SpaIIConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000, seed: 0, restarts: 5 }
    }
}

impl SpaIIConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn fit_options(&self) -> FitOptions {
        FitOptions { tol: self.tol, max_iter: self.max_iter, window: 10 }
    }
}

/// Result of [`solve_spa1`].
#[derive(Debug, Clone)]
pub struct SpaSolution {
    /// `D × K` vertex matrix.
    pub sigma: DMatrix<f64>,
    /// `K × T` barycentric coordinates.
    pub gamma: DMatrix<f64>,
    /// `‖X − ΣΓ‖_F`.
    pub objective: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Objective after initialization and after every alternating iteration
    /// of the winning restart.
    pub history: Vec<f64>,
}

/// Fits `Γ` column by column for fixed vertices, starting from the current
/// contents of `gamma`.
fn gamma_step(sigma: &DMatrix<f64>, data: &DMatrix<f64>, gamma: &mut DMatrix<f64>) {
    let qp = SimplexLeastSquares::new(sigma);
    let b = sigma.tr_mul(data);
    let k = sigma.ncols();
    gamma
        .as_mut_slice()
        .par_chunks_mut(k)
        .zip(b.as_slice().par_chunks(k))
        .for_each(|(g, bt)| {
            qp.solve_warm(bt, g, InnerOptions::SPA1);
        });
}

/// `Σ = XΓᵀ(ΓΓᵀ)⁻¹`, with a small ridge term when `ΓΓᵀ` is singular.
fn sigma_step(data: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let ggt = gamma * gamma.transpose();
    let xgt = data * gamma.transpose();
    let k = ggt.nrows();
    let solve = |m: DMatrix<f64>| m.cholesky().map(|c| c.solve(&xgt.transpose()).transpose());
    let full_rank = ggt.clone().svd(false, false).singular_values.min() > 1e-12 * ggt.norm();
    if full_rank {
        if let Some(s) = solve(ggt.clone()) {
            return s;
        }
    }
    match solve(&ggt + DMatrix::identity(k, k) * 1e-10) {
        Some(s) => s,
        None => {
            let pinv = ggt.pseudo_inverse(1e-12).expect("non-negative epsilon");
            xgt * pinv
        }
    }
}

/// Residual below which a factorization counts as exact.
fn exact_fit(data: &DMatrix<f64>) -> f64 {
    1e-10 * data.norm()
}

fn spa1_single(data: &DMatrix<f64>, k: usize, cfg: &SpaIIConfig, rng: &mut ChaCha8Rng) -> SpaSolution {
    let (d, t) = data.shape();
    let mut cols: Vec<usize> = sample(rng, t, k.min(t)).into_vec();
    while cols.len() < k {
        cols.push(rng.gen_range(0..t));
    }
    let mut sigma = DMatrix::from_fn(d, k, |i, j| data[(i, cols[j])]);
    let mut gamma = DMatrix::from_element(k, t, 1.0 / k as f64);
    gamma_step(&sigma, data, &mut gamma);
    let mut obj = (data - &sigma * &gamma).norm();
    let mut history = vec![obj];
    let mut iterations = 0;

    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let new_sigma = sigma_step(data, &gamma);
        let sigma_obj = (data - &new_sigma * &gamma).norm();
        if !sigma_obj.is_finite() || sigma_obj > obj {
            break;
        }
        sigma = new_sigma;
        gamma_step(&sigma, data, &mut gamma);
        let new_obj = (data - &sigma * &gamma).norm();
        let new_obj = new_obj.min(sigma_obj);
        let decrease = obj * obj - new_obj * new_obj;
        obj = new_obj;
        history.push(obj);
        if decrease <= cfg.tol * history[history.len() - 2].powi(2) || obj <= exact_fit(data) {
            break;
        }
    }
    let objective = (data - &sigma * &gamma).norm();
    SpaSolution { sigma, gamma, objective, iterations, restarts_used: 0, history }
}

/// Fits a `K`-vertex polytope to the columns of `data` by alternating
/// minimization, keeping the best of `cfg.restarts` seeded starts.
pub fn solve_spa1(data: &DMatrix<f64>, k: usize, cfg: &SpaIIConfig) -> Result<SpaSolution> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("number of vertices must be at least 1".into()));
    }
    if data.ncols() == 0 || data.nrows() == 0 {
        return Err(Error::InsufficientData("empty data matrix".into()));
    }
    ensure_finite(data.iter(), "data")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let restarts = cfg.restarts.max(1);
    let mut best: Option<SpaSolution> = None;
    let mut used = 0;
    for _ in 0..restarts {
        used += 1;
        let sol = spa1_single(data, k, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
            best = Some(sol);
        }
        if best.as_ref().is_some_and(|b| b.objective <= exact_fit(data)) {
            break;
        }
    }
    let mut best = best.expect("at least one restart");
    best.restarts_used = used;
    Ok(best)
}

fn pair_matrices(gamma: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("empty pair list".into()));
    }
    let (k, t) = gamma.shape();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= t || b >= t) {
        return Err(Error::Dimension(format!("pair ({a}, {b}) out of range for {t} columns")));
    }
    let inputs = DMatrix::from_fn(k, pairs.len(), |i, p| gamma[(i, pairs[p].0)]);
    let targets = DMatrix::from_fn(k, pairs.len(), |i, p| gamma[(i, pairs[p].1)]);
    Ok((inputs, targets))
}

/// Fits a column-stochastic `Λ` with `γ_target ≈ Λγ_input` over the given
/// `(input, target)` column pairs. The solver starts at the identity.
pub fn solve_spa2(gamma: &DMatrix<f64>, pairs: &[(usize, usize)], cfg: &SpaIIConfig) -> Result<StochasticFit> {
    cfg.validate()?;
    let (inputs, targets) = pair_matrices(gamma, pairs)?;
    spa2_from_matrices(&inputs, &targets, cfg)
}

pub(crate) fn spa2_from_matrices(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &SpaIIConfig,
) -> Result<StochasticFit> {
    let k = inputs.nrows();
    let start = ColumnStochasticMatrix::identity(k);
    fit_column_stochastic(inputs.as_view(), targets, Some(&start), cfg.fit_options())
}

/// Consecutive pairs `(t, t + 1)` for a series of length `t`.
pub fn consecutive_pairs(t: usize) -> Vec<(usize, usize)> {
    (1..t).map(|i| (i - 1, i)).collect()
}

fn check_point(sigma: &DMatrix<f64>, x: &[f64]) -> Result<()> {
    if sigma.ncols() == 0 {
        return Err(Error::Dimension("polytope has no vertices".into()));
    }
    if sigma.nrows() != x.len() {
        return Err(Error::Dimension(format!(
            "point has {} coordinates, polytope lives in dimension {}",
            x.len(),
            sigma.nrows()
        )));
    }
    ensure_finite(x.iter(), "point")?;
    ensure_finite(sigma.iter(), "polytope")
}

/// Checks that the vertices span a simplex.
pub fn check_affinely_independent(sigma: &DMatrix<f64>) -> Result<()> {
    let k = sigma.ncols();
    if k <= 1 {
        return Ok(());
    }
    let diffs = DMatrix::from_fn(sigma.nrows(), k - 1, |i, j| sigma[(i, j + 1)] - sigma[(i, 0)]);
    if diffs.nrows() < diffs.ncols() {
        return Err(Error::DegeneratePolytope(0.0));
    }
    let smallest = diffs.singular_values().min();
    if smallest > 1e-10 {
        Ok(())
    } else {
        Err(Error::DegeneratePolytope(smallest))
    }
}

/// Barycentric coordinates of the orthogonal projection of `x` onto the
/// simplex spanned by the columns of `sigma` (`K ≤ D + 1`, affinely
/// independent).
pub fn rho_small_k(sigma: &DMatrix<f64>, x: &[f64]) -> Result<DVector<f64>> {
    check_point(sigma, x)?;
    if sigma.ncols() > sigma.nrows() + 1 {
        return Err(Error::NotApplicable(format!(
            "{} vertices in dimension {}; use rho_large_k",
            sigma.ncols(),
            sigma.nrows()
        )));
    }
    check_affinely_independent(sigma)?;
    let qp = SimplexLeastSquares::new(sigma);
    Ok(DVector::from_vec(project_with(&qp, sigma, x, None)))
}

fn project_with(qp: &SimplexLeastSquares, sigma: &DMatrix<f64>, x: &[f64], start: Option<&[f64]>) -> Vec<f64> {
    let k = sigma.ncols();
    let b: Vec<f64> = (0..k)
        .map(|j| sigma.column(j).iter().zip(x).map(|(s, v)| s * v).sum())
        .collect();
    let mut g = match start {
        Some(s) => s.to_vec(),
        None => vec![1.0 / k as f64; k],
    };
    if start.is_none() {
        qp.solve_warm(&b, &mut g, InnerOptions::PRECISE);
    } else {
        qp.solve(&b, &mut g, InnerOptions::PRECISE);
    }
    g
}

/// Barycentric coordinates for every column of `data`; uses [`rho_small_k`]
/// when the vertices form a simplex and otherwise [`rho_large_k`] chained
/// from a uniform start.
pub fn project_series(sigma: &DMatrix<f64>, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = sigma.ncols();
    if data.nrows() != sigma.nrows() {
        return Err(Error::Dimension(format!(
            "data has {} rows, polytope lives in dimension {}",
            data.nrows(),
            sigma.nrows()
        )));
    }
    ensure_finite(data.iter(), "data")?;
    let mut out = DMatrix::zeros(k, data.ncols());
    if k <= sigma.nrows() + 1 && check_affinely_independent(sigma).is_ok() {
        let qp = SimplexLeastSquares::new(sigma);
        out.as_mut_slice()
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(t, g)| g.copy_from_slice(&project_with(&qp, sigma, data.column(t).as_slice(), None)));
    } else {
        let mut reference = DVector::from_element(k, 1.0 / k as f64);
        for t in 0..data.ncols() {
            reference = rho_large_k(sigma, data.column(t).as_slice(), reference.as_slice())?;
            out.set_column(t, &reference);
        }
    }
    Ok(out)
}

/// Barycentric coordinates of `x` in an over-complete polytope (`K > D`),
/// found by projected descent from `reference`.
pub fn rho_large_k(sigma: &DMatrix<f64>, x: &[f64], reference: &[f64]) -> Result<DVector<f64>> {
    check_point(sigma, x)?;
    if reference.len() != sigma.ncols() {
        return Err(Error::Dimension(format!(
            "reference has {} entries for {} vertices",
            reference.len(),
            sigma.ncols()
        )));
    }
    if !is_stochastic(reference) {
        return Err(Error::InvalidInput("reference is not a stochastic vector".into()));
    }
    let qp = SimplexLeastSquares::new(sigma);
    Ok(DVector::from_vec(project_with(&qp, sigma, x, Some(reference))))
}
