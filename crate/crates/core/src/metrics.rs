//! Error measures, attractor distances and autocorrelations.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::simplex::is_stochastic;

fn l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// `‖γ − γ̃‖₂` between two barycentric coordinate vectors.
pub fn barycentric_error(g: &[f64], g2: &[f64]) -> Result<f64> {
    l2(g, g2)
}

/// `‖x − x̃‖₂` between two states.
pub fn true_space_error(x: &[f64], x2: &[f64]) -> Result<f64> {
    l2(x, x2)
}

/// Which space a series lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Barycentric,
    True,
}

/// Mean `k`-step error over all forecasts that reach `k` steps.
///
/// `forecasts[s]` is a forecast started from `truth` column `s`: its column
/// `j` predicts truth column `s + j + 1`.
pub fn avg_k_step_error(truth: &DMatrix<f64>, forecasts: &[DMatrix<f64>], k: usize, space: Space) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (s, f) in forecasts.iter().enumerate() {
        if f.nrows() != truth.nrows() {
            return Err(Error::Dimension(format!("forecast {s} has {} rows, truth {}", f.nrows(), truth.nrows())));
        }
        if f.ncols() < k || s + k >= truth.ncols() {
            continue;
        }
        let (a, b) = (truth.column(s + k), f.column(k - 1));
        if space == Space::Barycentric && !(is_stochastic(a.as_slice()) && is_stochastic(b.as_slice())) {
            return Err(Error::InvalidInput(format!("non-stochastic column at start {s}")));
        }
        sum += l2(a.as_slice(), b.as_slice())?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InsufficientData(format!("no forecast reaches {k} steps")));
    }
    Ok(sum / count as f64)
}

/// Largest distance from a column of `a` to its nearest column of `b`.
///
/// Scans `b` in a shuffled order and abandons a column of `a` as soon as it
/// is closer to `b` than the running maximum, which keeps the search close
/// to linear on trajectory data. The result is exact.
fn directed(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ia: Vec<usize> = (0..a.ncols()).collect();
    let mut ib: Vec<usize> = (0..b.ncols()).collect();
    ia.shuffle(&mut rng);
    ib.shuffle(&mut rng);
    let chunk = ia.len().div_ceil(rayon::current_num_threads() * 4).max(1);
    ia.par_chunks(chunk)
        .map(|part| {
            let mut cmax = 0.0f64;
            for &i in part {
                let p = a.column(i);
                let mut cmin = f64::INFINITY;
                for &j in &ib {
                    let d = (p - b.column(j)).norm_squared();
                    if d < cmin {
                        cmin = d;
                        if cmin < cmax {
                            break;
                        }
                    }
                }
                cmax = cmax.max(cmin);
            }
            cmax
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Hausdorff distance between the column sets of `a` and `b`.
pub fn hausdorff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::InvalidInput("point sets must be non-empty".into()));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!("points of dimension {} and {}", a.nrows(), b.nrows())));
    }
    Ok(directed(a, b).max(directed(b, a)))
}

/// `1/(N(T − l)) Σ_r Σ_t (γ_{r,t} − γ̄)(γ_{r,t−l} − γ̄)` for coordinate `coord`,
/// where `γ̄` is the mean over all realisations and times. Not normalized by
/// the variance.
pub fn autocorrelation(series: &[DMatrix<f64>], coord: usize, lag: usize) -> Result<f64> {
    let first = series.first().ok_or_else(|| Error::InvalidInput("no realisations".into()))?;
    let t_len = first.ncols();
    if series.iter().any(|s| s.ncols() != t_len) {
        return Err(Error::Dimension("realisations differ in length".into()));
    }
    if let Some(s) = series.iter().find(|s| coord >= s.nrows()) {
        return Err(Error::Dimension(format!("coordinate {coord} out of range for {} rows", s.nrows())));
    }
    if lag >= t_len {
        return Err(Error::InvalidInput(format!("lag {lag} not below series length {t_len}")));
    }
    let n = series.len() as f64;
    let mean = series.iter().map(|s| s.row(coord).sum()).sum::<f64>() / (n * t_len as f64);
    let mut acc = 0.0;
    for s in series {
        let row = s.row(coord);
        for t in lag..t_len {
            acc += (row[t] - mean) * (row[t - lag] - mean);
        }
    }
    Ok(acc / (n * (t_len - lag) as f64))
}

/// Mean over columns of `‖x_t − Σγ_t‖ / ‖x_t‖`; columns with `x_t = 0`
/// contribute the absolute error.
pub fn projection_loss(data: &DMatrix<f64>, sigma: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != data.nrows() || sigma.ncols() != gamma.nrows() || gamma.ncols() != data.ncols() {
        return Err(Error::Dimension(format!(
            "data {:?}, polytope {:?}, coordinates {:?}",
            data.shape(),
            sigma.shape(),
            gamma.shape()
        )));
    }
    if data.ncols() == 0 {
        return Err(Error::InsufficientData("no columns".into()));
    }
    let recon = sigma * gamma;
    let total: f64 = data
        .column_iter()
        .zip(recon.column_iter())
        .map(|(x, r)| {
            let err = (x - r).norm();
            let norm = x.norm();
            if norm > 0.0 {
                err / norm
            } else {
                err
            }
        })
        .sum();
    Ok(total / data.ncols() as f64)
}

/// Largest minus smallest value of every row.
pub fn row_ranges(data: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(data.nrows(), data.row_iter().map(|r| r.max() - r.min()))
}
