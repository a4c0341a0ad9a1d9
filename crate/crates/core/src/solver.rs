//! Projected first-order solvers shared by the SPA problems.
//!
//! Both solvers are monotone accelerated projected gradient methods (the
//! FISTA variant that keeps the better of the candidate and the previous
//! iterate), so the objective never increases from one iteration to the next.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::simplex::{project_in_place, ColumnStochasticMatrix};

/// Largest eigenvalue of `a·aᵀ`, estimated by power iteration.
pub(crate) fn gram_spectral_norm(a: DMatrixView<'_, f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(a.nrows(), |i, _| 1.0 + 0.01 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..500 {
        let w = a.tr_mul(&v);
        let mut u = a * w;
        let n = u.norm();
        if n == 0.0 {
            return 0.0;
        }
        u /= n;
        let converged = (n - est).abs() <= 1e-12 * n;
        est = n;
        v = u;
        if converged {
            break;
        }
    }
    est
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
pub(crate) fn psd_largest_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let k = h.nrows();
    if k == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(k, |i, _| 1.0 + 0.01 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..1000 {
        let mut u = h * &v;
        let n = u.norm();
        if n == 0.0 {
            return 0.0;
        }
        u /= n;
        let converged = (n - est).abs() <= 1e-13 * n;
        est = n;
        v = u;
        if converged {
            break;
        }
    }
    est
}

/// Stopping rule for the per-vector simplex solver.
#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerOptions {
    pub step_tol: f64,
    pub max_iter: usize,
}

impl InnerOptions {
    pub const SPA1: Self = Self { step_tol: 1e-9, max_iter: 500 };
    pub const PRECISE: Self = Self { step_tol: 1e-15, max_iter: 200_000 };
}

/// `min ½‖x − Σγ‖²` over the unit simplex for a fixed `Σ`, written in terms of
/// `H = ΣᵀΣ` and `b = Σᵀx`.
pub(crate) struct SimplexLeastSquares {
    h: DMatrix<f64>,
    inv_l: f64,
}

impl SimplexLeastSquares {
    pub fn new(sigma: &DMatrix<f64>) -> Self {
        let h = sigma.tr_mul(sigma);
        let l = psd_largest_eigenvalue(&h) * 1.01;
        Self { h, inv_l: if l > 0.0 { 1.0 / l } else { 0.0 } }
    }

    pub fn k(&self) -> usize {
        self.h.nrows()
    }

    /// `½γᵀHγ − bᵀγ`, i.e. the objective up to the constant `½‖x‖²`.
    pub fn value(&self, b: &[f64], g: &[f64]) -> f64 {
        let k = self.k();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..k {
            let mut hi = 0.0;
            for j in 0..k {
                hi += self.h[(i, j)] * g[j];
            }
            quad += g[i] * hi;
            lin += b[i] * g[i];
        }
        0.5 * quad - lin
    }

    fn gradient(&self, b: &[f64], g: &[f64], out: &mut [f64]) {
        let k = self.k();
        for i in 0..k {
            let mut s = -b[i];
            for j in 0..k {
                s += self.h[(i, j)] * g[j];
            }
            out[i] = s;
        }
    }

    /// Improves `gamma` (which must be stochastic) in place; returns the
    /// number of iterations used.
    pub fn solve(&self, b: &[f64], gamma: &mut [f64], opts: InnerOptions) -> usize {
        let k = self.k();
        if k == 1 || self.inv_l == 0.0 {
            return 0;
        }
        let mut x_prev = gamma.to_vec();
        let mut y = gamma.to_vec();
        let mut z = vec![0.0; k];
        let mut grad = vec![0.0; k];
        let mut scratch = Vec::with_capacity(k);
        let mut f_x = self.value(b, gamma);
        let mut t = 1.0f64;
        let mut iters = 0;
        for it in 0..opts.max_iter {
            iters = it + 1;
            self.gradient(b, &y, &mut grad);
            for i in 0..k {
                z[i] = y[i] - self.inv_l * grad[i];
            }
            project_in_place(&mut z, &mut scratch);
            let f_z = self.value(b, &z);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            x_prev.copy_from_slice(gamma);
            let accepted = f_z <= f_x;
            if accepted {
                gamma.copy_from_slice(&z);
                f_x = f_z;
            }
            // y = x + (t/t')(z − x) + ((t − 1)/t')(x − x_prev)
            let mut change = 0.0f64;
            for i in 0..k {
                y[i] = gamma[i]
                    + (t / t_next) * (z[i] - gamma[i])
                    + ((t - 1.0) / t_next) * (gamma[i] - x_prev[i]);
                change = change.max((gamma[i] - x_prev[i]).abs());
            }
            t = t_next;
            if accepted && change < opts.step_tol {
                break;
            }
            if !accepted {
                // restart momentum from the current iterate
                y.copy_from_slice(gamma);
                t = 1.0;
            }
        }
        iters
    }

    /// Solves the equality-constrained problem on the current support of
    /// `gamma` exactly and keeps the result if it is feasible and no worse.
    /// Returns true when the result also satisfies the optimality
    /// conditions, i.e. is the exact minimizer.
    pub fn polish(&self, b: &[f64], gamma: &mut [f64]) -> bool {
        let k = self.k();
        let support: Vec<usize> = (0..k).filter(|&i| gamma[i] > 1e-12).collect();
        let s = support.len();
        if s == 0 {
            return false;
        }
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                kkt[(a, c)] = self.h[(i, j)];
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = b[i];
        }
        rhs[s] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { return false };
        if sol.iter().take(s).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return false;
        }
        let mut candidate = vec![0.0; k];
        for (a, &i) in support.iter().enumerate() {
            candidate[i] = sol[a];
        }
        let sum: f64 = candidate.iter().sum();
        candidate.iter_mut().for_each(|v| *v /= sum);
        // The face optimum can only be better; allow for rounding.
        let current = self.value(b, gamma);
        if self.value(b, &candidate) > current + 1e-12 * (1.0 + current.abs()) {
            return false;
        }
        gamma.copy_from_slice(&candidate);

        // Off the support the gradient must not undercut the multiplier.
        let mu = sol[s];
        let mut grad = vec![0.0; k];
        self.gradient(b, gamma, &mut grad);
        let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs())) + self.h.amax();
        (0..k).all(|i| gamma[i] > 0.0 || grad[i] + mu >= -1e-11 * scale)
    }

    /// Exact minimizer when the support of the warm start is already right,
    /// otherwise projected gradient followed by [`Self::polish`], first with a
    /// loose and then with the requested stopping rule.
    pub fn solve_warm(&self, b: &[f64], gamma: &mut [f64], opts: InnerOptions) {
        let mut trial = gamma.to_vec();
        if self.polish(b, &mut trial) {
            gamma.copy_from_slice(&trial);
            return;
        }
        if opts.max_iter > InnerOptions::SPA1.max_iter {
            self.solve(b, gamma, InnerOptions::SPA1);
            trial.copy_from_slice(gamma);
            if self.polish(b, &mut trial) {
                gamma.copy_from_slice(&trial);
                return;
            }
        }
        self.solve(b, gamma, opts);
        self.polish(b, gamma);
    }
}

/// Options for [`fit_column_stochastic`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct FitOptions {
    /// Stop when the objective decreased by less than this fraction over the
    /// last [`FitOptions::window`] iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub window: usize,
}

/// Outcome of a column-stochastic least-squares fit.
#[derive(Debug, Clone)]
pub struct StochasticFit {
    pub matrix: ColumnStochasticMatrix,
    /// `‖targets − Λ·inputs‖_F`, recomputed directly.
    pub residual: f64,
    pub iterations: usize,
    /// `‖targets − Λ·inputs‖_F` after each iteration (first entry: start).
    pub history: Vec<f64>,
}

fn project_columns(m: &mut DMatrix<f64>, scratch: &mut Vec<f64>) {
    for mut col in m.column_iter_mut() {
        project_in_place(col.as_mut_slice(), scratch);
    }
}

/// Least-squares objective `½‖Λ·inputs − targets‖²` seen through an affine
/// image of `Λ`, so that momentum steps can extrapolate the image instead of
/// recomputing it.
trait Objective {
    fn image(&self, lambda: &DMatrix<f64>) -> DMatrix<f64>;
    fn value(&self, lambda: &DMatrix<f64>, image: &DMatrix<f64>) -> f64;
    fn gradient(&self, image: &DMatrix<f64>) -> DMatrix<f64>;
    /// Per-column inverse step lengths `1/d_j` with `diag(d) ⪰` the Hessian
    /// of one row of `Λ`. The simplex constraint acts within columns, so a
    /// column-wise step keeps the projection Euclidean.
    fn inverse_steps(&self) -> Vec<f64>;
}

/// Image is the residual `Λ·inputs − targets`.
struct Direct<'a> {
    inputs: DMatrixView<'a, f64>,
    targets: &'a DMatrix<f64>,
}

impl Objective for Direct<'_> {
    fn image(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        lambda * self.inputs - self.targets
    }

    fn value(&self, _: &DMatrix<f64>, image: &DMatrix<f64>) -> f64 {
        0.5 * image.norm_squared()
    }

    fn gradient(&self, image: &DMatrix<f64>) -> DMatrix<f64> {
        (self.inputs * image.transpose()).transpose()
    }

    fn inverse_steps(&self) -> Vec<f64> {
        let l = gram_spectral_norm(self.inputs) * 1.01;
        vec![if l > 0.0 { 1.0 / l } else { 0.0 }; self.inputs.nrows()]
    }
}

/// Image is `Λ·G` with `G = inputs·inputsᵀ`; cheaper when there are many
/// more samples than input coordinates.
struct Gram {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    target_sq: f64,
}

impl Objective for Gram {
    fn image(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        lambda * &self.gram
    }

    fn value(&self, lambda: &DMatrix<f64>, image: &DMatrix<f64>) -> f64 {
        (0.5 * lambda.dot(image) - lambda.dot(&self.cross) + 0.5 * self.target_sq).max(0.0)
    }

    fn gradient(&self, image: &DMatrix<f64>) -> DMatrix<f64> {
        image - &self.cross
    }

    fn inverse_steps(&self) -> Vec<f64> {
        // Absolute row sums majorize a symmetric matrix; for stochastic
        // inputs they are the total weight of each input coordinate.
        self.gram
            .row_iter()
            .map(|r| {
                let d = r.iter().map(|v| v.abs()).sum::<f64>() * (1.0 + 1e-12);
                if d > 0.0 { 1.0 / d } else { 0.0 }
            })
            .collect()
    }
}

/// `min ‖targets − Λ·inputs‖_F` over column-stochastic `Λ` (`K × N`), where
/// `inputs` is `N × P` and `targets` is `K × P`.
///
/// Columns of `Λ` whose input row is identically zero do not affect the
/// objective and are set to the uniform distribution. A warm start is
/// returned unchanged if the iteration does not improve on it.
pub(crate) fn fit_column_stochastic(
    inputs: DMatrixView<'_, f64>,
    targets: &DMatrix<f64>,
    start: Option<&ColumnStochasticMatrix>,
    opts: FitOptions,
) -> Result<StochasticFit> {
    let (n, p) = inputs.shape();
    let k = targets.nrows();
    if targets.ncols() != p {
        return Err(Error::Dimension(format!(
            "{} input columns but {} target columns",
            p,
            targets.ncols()
        )));
    }
    if p == 0 {
        return Err(Error::InsufficientData("no training pairs".into()));
    }
    let x0 = match start {
        Some(s) if s.nrows() == k && s.ncols() == n => s.matrix().clone(),
        Some(_) => return Err(Error::Dimension("warm start has the wrong shape".into())),
        None => DMatrix::from_element(k, n, 1.0 / k as f64),
    };
    let (x, iterations, mut history) = if p > 2 * n {
        let gram = Gram { gram: inputs * inputs.transpose(), cross: targets * inputs.transpose(), target_sq: targets.norm_squared() };
        iterate(&gram, x0, opts)
    } else {
        iterate(&Direct { inputs, targets }, x0, opts)
    };
    let mut x = x;
    for (j, row) in inputs.row_iter().enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            x.column_mut(j).fill(1.0 / k as f64);
        }
    }
    let mut residual = (&x * inputs - targets).norm();
    if let Some(s) = start {
        let r0 = (s.matrix() * inputs - targets).norm();
        if r0 < residual {
            x = s.matrix().clone();
            residual = r0;
        }
    }
    if let Some(last) = history.last_mut() {
        *last = residual.min(*last);
    }
    Ok(StochasticFit {
        matrix: ColumnStochasticMatrix::from_projected(x),
        residual,
        iterations,
        history,
    })
}

fn iterate<O: Objective>(obj: &O, mut x: DMatrix<f64>, opts: FitOptions) -> (DMatrix<f64>, usize, Vec<f64>) {
    let mut scratch = Vec::with_capacity(x.nrows());
    project_columns(&mut x, &mut scratch);
    let inv_d = obj.inverse_steps();
    let mut img_x = obj.image(&x);
    let mut f_x = obj.value(&x, &img_x);
    let floor = 1e-32 * (1.0 + f_x);
    let mut history = vec![(2.0 * f_x).sqrt()];
    if inv_d.iter().all(|&v| v == 0.0) {
        return (x, 0, history);
    }
    let mut x_prev = x.clone();
    let mut img_prev = img_x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let beta = (t - 1.0) / (0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()));
        // The image is affine in Λ, so it extrapolates along with Λ.
        let y = &x + (&x - &x_prev) * beta;
        let img_y = &img_x + (&img_x - &img_prev) * beta;
        let mut z = obj.gradient(&img_y);
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col *= -inv_d[j];
        }
        z += y;
        project_columns(&mut z, &mut scratch);
        let img_z = obj.image(&z);
        let f_z = obj.value(&z, &img_z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());

        if f_z <= f_x {
            x_prev = std::mem::replace(&mut x, z);
            img_prev = std::mem::replace(&mut img_x, img_z);
            f_x = f_z;
            t = t_next;
        } else {
            // reject and restart momentum
            x_prev.copy_from(&x);
            img_prev.copy_from(&img_x);
            t = 1.0;
        }
        history.push((2.0 * f_x).sqrt());

        if f_x <= floor {
            break;
        }
        if history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            let new = *history.last().unwrap();
            let old_f = old * old;
            if old_f - new * new <= opts.tol * old_f {
                break;
            }
        }
    }
    (x, iterations, history)
}
