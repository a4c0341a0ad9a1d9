//! Linear autoregressive forecasting.

use nalgebra::DMatrix;

use crate::error::{ensure_finite, Error, Result};

/// `x_{t+Δt} ≈ θ [x_t; x_{t−τ}; …; x_{t−(M−1)τ}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub dim: usize,
    pub depth: usize,
    pub memory_lag: usize,
    pub forward_step: usize,
    /// `d × dM`.
    pub theta: DMatrix<f64>,
}

fn lagged(data: &DMatrix<f64>, t: usize, depth: usize, lag: usize, out: &mut [f64]) {
    let d = data.nrows();
    for m in 0..depth {
        out[m * d..(m + 1) * d].copy_from_slice(data.column(t - m * lag).as_slice());
    }
}

/// Least-squares fit of the lagged regression over every usable time.
pub fn fit_ar(data: &DMatrix<f64>, depth: usize, forward_step: usize, memory_lag: usize) -> Result<ArModel> {
    if depth == 0 || forward_step == 0 || memory_lag == 0 {
        return Err(Error::InvalidInput("depth, forward step and memory lag must be positive".into()));
    }
    ensure_finite(data.iter(), "data")?;
    let (d, t_len) = data.shape();
    let first = (depth - 1) * memory_lag;
    if t_len <= first + forward_step {
        return Err(Error::InsufficientData(format!("{t_len} samples leave no regression row")));
    }
    let times = first..t_len - forward_step;
    let n = times.len();
    let mut z = DMatrix::zeros(d * depth, n);
    let mut y = DMatrix::zeros(d, n);
    for (p, t) in times.enumerate() {
        lagged(data, t, depth, memory_lag, z.column_mut(p).as_mut_slice());
        y.set_column(p, &data.column(t + forward_step));
    }
    let mut gram = &z * z.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += 1e-10;
    }
    let rhs = &z * y.transpose();
    // Rounding can leave lagged low-rank data slightly indefinite.
    let theta_t = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .full_piv_lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidInput("normal equations are singular".into()))?,
    };
    Ok(ArModel { dim: d, depth, memory_lag, forward_step, theta: theta_t.transpose() })
}

/// Iterates the model `horizon` forward steps past the last warmup column.
pub fn predict_ar(model: &ArModel, warmup: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    let d = model.dim;
    if warmup.nrows() != d {
        return Err(Error::Dimension(format!("warmup has {} rows, model is {d}-dimensional", warmup.nrows())));
    }
    let span = (model.depth - 1) * model.memory_lag;
    if warmup.ncols() < span + 1 {
        return Err(Error::InsufficientData(format!("warmup has {} states, need {}", warmup.ncols(), span + 1)));
    }
    if model.depth > 1 && !model.memory_lag.is_multiple_of(model.forward_step) {
        return Err(Error::InvalidInput("memory lag must be a multiple of the forward step".into()));
    }
    // states at forward-step spacing, oldest first
    let stride = if model.depth > 1 { model.memory_lag / model.forward_step } else { 1 };
    let keep = (model.depth - 1) * stride + 1;
    let last = warmup.ncols() - 1;
    let mut states = DMatrix::zeros(d, keep + horizon);
    for j in 0..keep {
        states.set_column(keep - 1 - j, &warmup.column(last - j * model.forward_step));
    }
    let mut z = vec![0.0; d * model.depth];
    for h in 0..horizon {
        let t = keep - 1 + h;
        lagged(&states, t, model.depth, stride, &mut z);
        let next = &model.theta * nalgebra::DVector::from_column_slice(&z);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: h + 1 });
        }
        states.set_column(t + 1, &next);
    }
    Ok(states.columns(keep, horizon).clone_owned())
}
