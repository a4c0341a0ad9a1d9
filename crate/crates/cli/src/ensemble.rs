//! Perturbed test starts for chaotic systems.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mspa::pipeline::Normalization;

use crate::{CliError, Result};

/// `count` states drawn from the columns of `pool`, each shifted by uniform
/// noise in `[−noise, noise)` per coordinate, measured in the normalized
/// units of `norm`.
pub fn perturbed_starts(
    pool: &DMatrix<f64>,
    norm: &Normalization,
    count: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if pool.ncols() == 0 {
        return Err(CliError::Usage("empty pool of start states".into()));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(CliError::Usage(format!("noise must be a non-negative number, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let state = pool.columns(rng.gen_range(0..pool.ncols()), 1).clone_owned();
        let mut z = norm.forward(&state)?;
        if noise > 0.0 {
            z.iter_mut().for_each(|v| *v += rng.gen_range(-noise..noise));
        }
        out.push(norm.inverse(&z)?.column(0).clone_owned());
    }
    Ok(out)
}
