//! Geometry of the probability simplex: Euclidean projection, stochastic
//! vectors and column-stochastic matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};

/// Absolute tolerance on the entry sum of a stochastic vector.
pub const STOCHASTIC_TOL: f64 = 1e-10;

/// Projects `v` onto `{x : x >= 0, sum(x) = 1}` in place.
///
/// Sort-based exact algorithm; `scratch` is reused between calls so the hot
/// loops of the solvers do not allocate.
pub(crate) fn project_in_place(v: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(v);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Euclidean projection of `v` onto the unit simplex.
pub fn project_to_unit_simplex(v: &[f64]) -> Result<DVector<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension("cannot project an empty vector".into()));
    }
    ensure_finite(v, "vector")?;
    let mut out = v.to_vec();
    project_in_place(&mut out, &mut Vec::with_capacity(v.len()));
    Ok(DVector::from_vec(out))
}

/// True if every entry is non-negative and the entries sum to one.
pub fn is_stochastic(v: &[f64]) -> bool {
    !v.is_empty()
        && v.iter().all(|&x| (0.0..=1.0 + STOCHASTIC_TOL).contains(&x))
        && (v.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL
}

/// Clips negative round-off, rescales to unit sum and clips to `[0, 1]`.
///
/// Propagated barycentric coordinates drift off the simplex by rounding; this
/// is applied after every propagation step.
pub fn renormalize(v: &mut [f64]) {
    for x in v.iter_mut() {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x = (*x / s).min(1.0);
        }
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Maps barycentric coordinates to the point `Σγ`.
pub fn barycentric_to_point(sigma: &DMatrix<f64>, gamma: &[f64]) -> Result<DVector<f64>> {
    if sigma.ncols() != gamma.len() {
        return Err(Error::Dimension(format!(
            "polytope has {} vertices but coordinates have {} entries",
            sigma.ncols(),
            gamma.len()
        )));
    }
    Ok(sigma * DVector::from_column_slice(gamma))
}

/// A matrix whose columns are stochastic vectors.
///
/// Multiplying a stochastic vector by such a matrix yields a stochastic
/// vector, which is what keeps every propagated state inside its polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStochasticMatrix(DMatrix<f64>);

impl ColumnStochasticMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Dimension("column-stochastic matrix must be non-empty".into()));
        }
        for (j, col) in m.column_iter().enumerate() {
            if !is_stochastic(col.as_slice()) {
                return Err(Error::InvalidInput(format!("column {j} is not stochastic")));
            }
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller has just projected column by column.
    pub(crate) fn from_projected(m: DMatrix<f64>) -> Self {
        debug_assert!(m.column_iter().all(|c| is_stochastic(c.as_slice())));
        Self(m)
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self(DMatrix::from_element(rows, cols, 1.0 / rows as f64))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `Λγ`, renormalized onto the simplex.
    pub fn apply(&self, gamma: &[f64]) -> Result<DVector<f64>> {
        if gamma.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "matrix has {} columns, vector has {} entries",
                self.ncols(),
                gamma.len()
            )));
        }
        let mut out = &self.0 * DVector::from_column_slice(gamma);
        renormalize(out.as_mut_slice());
        Ok(out)
    }
}

impl TryFrom<DMatrix<f64>> for ColumnStochasticMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<ColumnStochasticMatrix> for DMatrix<f64> {
    fn from(m: ColumnStochasticMatrix) -> Self {
        m.0
    }
}

/// Result of [`dominant_eigvec_stochastic`].
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub vector: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Fixed point of a square column-stochastic matrix by power iteration from
/// the uniform vector.
///
/// Fails when the iteration keeps cycling, which happens if `Λ` has complex
/// eigenvalues on the unit circle.
pub fn dominant_eigvec_stochastic(
    lambda: &ColumnStochasticMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    let k = lambda.nrows();
    if lambda.ncols() != k {
        return Err(Error::Dimension(format!("matrix is {}x{}, not square", k, lambda.ncols())));
    }
    let mut gamma = DVector::from_element(k, 1.0 / k as f64);
    let mut residual = f64::INFINITY;
    for it in 0..=max_iter {
        let next = lambda.apply(gamma.as_slice())?;
        residual = (&next - &gamma).norm();
        if residual <= tol {
            return Ok(FixedPoint { vector: gamma, iterations: it, residual });
        }
        gamma = next;
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_stochastic(rng: &mut impl Rng, k: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().ln()).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    #[test]
    fn projection_of_simplex_point_is_identity() {
        let p = project_to_unit_simplex(&[0.5, 0.5]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn projection_to_nearest_vertex() {
        let p = project_to_unit_simplex(&[2.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn projection_rejects_empty_and_nan() {
        assert!(matches!(project_to_unit_simplex(&[]), Err(Error::Dimension(_))));
        assert!(project_to_unit_simplex(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn projection_matches_grid_search() {
        // Exhaustive search over the 5-simplex at resolution 1e-3 is too big
        // (~10^12 points), so the grid oracle refines around coarse optima:
        // the objective is strictly convex, so the coarse minimizer lies in
        // the basin of the true one.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.5)).collect();
            let p = project_to_unit_simplex(&v).unwrap();
            let oracle = grid_oracle(&v);
            let err = p.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 2e-3, "projection {p:?} vs grid {oracle:?}");
        }
    }

    fn dist2(v: &[f64], g: &[f64]) -> f64 {
        v.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Grid search over the simplex: coarse pass at 1/50, then successive
    /// passes at finer resolution down to 1e-3 in a window around the best.
    fn grid_oracle(v: &[f64]) -> Vec<f64> {
        let k = v.len();
        let mut best = vec![1.0 / k as f64; k];
        let mut best_d = f64::INFINITY;
        let n = 50usize;
        let mut idx = vec![0usize; k - 1];
        loop {
            let used: usize = idx.iter().sum();
            if used <= n {
                let mut g: Vec<f64> = idx.iter().map(|&i| i as f64 / n as f64).collect();
                g.push((n - used) as f64 / n as f64);
                let d = dist2(v, &g);
                if d < best_d {
                    best_d = d;
                    best = g;
                }
            }
            let mut pos = 0;
            loop {
                if pos == k - 1 {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] <= n {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == k - 1 {
                break;
            }
        }
        for &(res, radius) in &[(0.005, 6i64), (0.001, 6i64)] {
            let center = best.clone();
            let mut offs = vec![-radius; k - 1];
            loop {
                let mut g: Vec<f64> =
                    center[..k - 1].iter().zip(&offs).map(|(c, &o)| c + o as f64 * res).collect();
                let last = 1.0 - g.iter().sum::<f64>();
                if g.iter().all(|&x| x >= -1e-12) && last >= -1e-12 {
                    g.push(last);
                    let d = dist2(v, &g);
                    if d < best_d {
                        best_d = d;
                        best = g;
                    }
                }
                let mut pos = 0;
                while pos < k - 1 {
                    offs[pos] += 1;
                    if offs[pos] <= radius {
                        break;
                    }
                    offs[pos] = -radius;
                    pos += 1;
                }
                if pos == k - 1 {
                    break;
                }
            }
        }
        best
    }

    #[test]
    fn barycentric_vertex_centroid_and_linearity() {
        let sigma = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(barycentric_to_point(&sigma, &[1.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-2.0..2.0));
        let centroid = barycentric_to_point(&sigma, &[1.0 / 3.0; 3]).unwrap();
        let mean = sigma.column_mean();
        assert!((centroid - mean).norm() < 1e-14);

        let p = barycentric_to_point(&sigma, &[0.2, 0.3, 0.5]).unwrap();
        let expected = sigma.column(0) * 0.2 + sigma.column(1) * 0.3 + sigma.column(2) * 0.5;
        assert!((p - expected).norm() < 1e-14);

        assert!(barycentric_to_point(&sigma, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn fixed_point_of_identity_is_uniform_start() {
        let fp = dominant_eigvec_stochastic(&ColumnStochasticMatrix::identity(4), 1e-12, 10).unwrap();
        assert_eq!(fp.iterations, 0);
        assert!(fp.vector.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn fixed_point_of_averaging_matrix() {
        let m = ColumnStochasticMatrix::new(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let fp = dominant_eigvec_stochastic(&m, 1e-12, 10).unwrap();
        assert_eq!(fp.vector.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn fixed_point_matches_dense_nullspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let cols: Vec<f64> = (0..4).flat_map(|_| random_stochastic(&mut rng, 4)).collect();
            let m = DMatrix::from_column_slice(4, 4, &cols);
            let lambda = ColumnStochasticMatrix::new(m.clone()).unwrap();
            let fp = dominant_eigvec_stochastic(&lambda, 1e-13, 100_000).unwrap();

            // Oracle: right singular vector of (Λ - I) for the smallest
            // singular value, scaled to unit sum.
            let a = &m - DMatrix::identity(4, 4);
            let svd = a.svd(false, true);
            let v_t = svd.v_t.unwrap();
            let (imin, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            let mut null: Vec<f64> = v_t.row(imin).iter().copied().collect();
            let s: f64 = null.iter().sum();
            null.iter_mut().for_each(|x| *x /= s);
            for (a, b) in fp.vector.iter().zip(&null) {
                assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn cycling_permutation_does_not_converge() {
        // uniform -> (1/3, 2/3, 0) -> (2/3, 1/3, 0) -> (1/3, 2/3, 0) -> ...
        let m = DMatrix::from_column_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let lambda = ColumnStochasticMatrix::new(m).unwrap();
        assert!(matches!(
            dominant_eigvec_stochastic(&lambda, 1e-12, 50),
            Err(Error::NoConvergence { iterations: 50, .. })
        ));
        let not_square = ColumnStochasticMatrix::uniform(2, 3);
        assert!(matches!(dominant_eigvec_stochastic(&not_square, 1e-12, 5), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_non_stochastic_columns() {
        let m = DMatrix::from_column_slice(2, 2, &[0.5, 0.6, 1.0, 0.0]);
        assert!(ColumnStochasticMatrix::new(m).is_err());
    }

    #[test]
    fn renormalize_clips_and_rescales() {
        let mut v = [-1e-17, 0.5, 0.5000001];
        renormalize(&mut v);
        assert!(is_stochastic(&v));
        assert_eq!(v[0], 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projection_is_stochastic(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
                let p = project_to_unit_simplex(&v).unwrap();
                prop_assert!(is_stochastic(p.as_slice()));
            }

            #[test]
            fn projection_is_non_expansive(
                pair in (1usize..10).prop_flat_map(|n| (
                    prop::collection::vec(-5.0f64..5.0, n),
                    prop::collection::vec(-5.0f64..5.0, n),
                ))
            ) {
                let (u, v) = pair;
                let pu = project_to_unit_simplex(&u).unwrap();
                let pv = project_to_unit_simplex(&v).unwrap();
                let d_in: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!((pu - pv).norm() <= d_in + 1e-12);
            }

            #[test]
            fn projection_is_idempotent(seed in any::<u64>(), k in 1usize..10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = random_stochastic(&mut rng, k);
                let p = project_to_unit_simplex(&g).unwrap();
                for (a, b) in p.iter().zip(&g) {
                    prop_assert!((a - b).abs() < 1e-14);
                }
            }

            #[test]
            fn column_stochastic_preserves_simplex(seed in any::<u64>(), k in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cols: Vec<f64> = (0..k).flat_map(|_| random_stochastic(&mut rng, k)).collect();
                let m = ColumnStochasticMatrix::new(DMatrix::from_column_slice(k, k, &cols)).unwrap();
                let g = random_stochastic(&mut rng, k);
                let raw = m.matrix() * DVector::from_vec(g);
                prop_assert!(is_stochastic(raw.as_slice()));
            }

            #[test]
            fn power_iteration_reaches_a_fixed_point(seed in any::<u64>(), k in 2usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cols: Vec<f64> = (0..k).flat_map(|_| random_stochastic(&mut rng, k)).collect();
                let m = ColumnStochasticMatrix::new(DMatrix::from_column_slice(k, k, &cols)).unwrap();
                if let Ok(fp) = dominant_eigvec_stochastic(&m, 1e-10, 100_000) {
                    let image = m.matrix() * &fp.vector;
                    prop_assert!((image - &fp.vector).norm() <= 1e-10);
                }
            }
        }
    }
}
