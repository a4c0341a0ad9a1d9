//! Path affiliations and propagators with memory.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::simplex::{renormalize, ColumnStochasticMatrix};
use crate::solver::fit_column_stochastic;
use crate::spa::{spa2_from_matrices, SpaIIConfig};

/// Largest number of path-affiliation entries we are willing to store.
pub const MAX_PATH_ENTRIES: usize = 100_000_000;

/// Memory depth `M`, lag `τ` between remembered states and forward step `Δt`,
/// both counted in raw time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryConfig {
    pub depth: usize,
    pub memory_lag: usize,
    pub forward_step: usize,
}

impl MemoryConfig {
    pub fn new(depth: usize, memory_lag: usize, forward_step: usize) -> Result<Self> {
        if depth == 0 || memory_lag == 0 || forward_step == 0 {
            return Err(Error::InvalidInput(format!(
                "depth, memory lag and forward step must be positive (got {depth}, {memory_lag}, {forward_step})"
            )));
        }
        if depth > 1 && !memory_lag.is_multiple_of(forward_step) {
            return Err(Error::InvalidInput(format!(
                "memory lag {memory_lag} is not a multiple of the forward step {forward_step}"
            )));
        }
        Ok(Self { depth, memory_lag, forward_step })
    }

    /// The memoryless configuration `M = 1`, `τ = Δt = 1`.
    pub fn memoryless() -> Self {
        Self { depth: 1, memory_lag: 1, forward_step: 1 }
    }

    /// Raw steps of history needed before the current time.
    pub fn history_span(&self) -> usize {
        (self.depth - 1) * self.memory_lag
    }

    /// Times `t` (column indices) for which both the lagged inputs and the
    /// target `t + Δt` lie inside a series of length `len`.
    pub fn training_times(&self, len: usize) -> std::ops::Range<usize> {
        let first = self.history_span();
        let end = len.saturating_sub(self.forward_step);
        first..end.max(first)
    }
}

/// Bijection between linear indices `0..K^M` and tuples in `{0..K}^M`,
/// lexicographic with the last index varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexOrdering {
    k: usize,
    depth: usize,
    len: usize,
}

impl IndexOrdering {
    pub fn new(k: usize, depth: usize) -> Result<Self> {
        if k == 0 || depth == 0 {
            return Err(Error::InvalidInput("K and M must both be at least 1".into()));
        }
        let mut len = 1usize;
        for _ in 0..depth {
            len = len
                .checked_mul(k)
                .filter(|&l| l <= MAX_PATH_ENTRIES)
                .ok_or_else(|| Error::InvalidInput(format!("K^M = {k}^{depth} exceeds {MAX_PATH_ENTRIES}")))?;
        }
        Ok(Self { k, depth, len })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `K^M`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tuple(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.depth];
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = rest % self.k;
            rest /= self.k;
        }
        out
    }

    pub fn index(&self, tuple: &[usize]) -> usize {
        tuple.iter().fold(0, |acc, &i| acc * self.k + i)
    }

    /// `m`-th tuple entry of linear index `index`.
    fn digit(&self, index: usize, m: usize) -> usize {
        (index / self.k.pow((self.depth - 1 - m) as u32)) % self.k
    }
}

fn check_gammas<G: AsRef<[f64]>>(gammas: &[G], ordering: &IndexOrdering) -> Result<()> {
    if gammas.len() != ordering.depth() {
        return Err(Error::Dimension(format!(
            "{} barycentric vectors for memory depth {}",
            gammas.len(),
            ordering.depth()
        )));
    }
    if let Some(g) = gammas.iter().find(|g| g.as_ref().len() != ordering.k()) {
        return Err(Error::Dimension(format!(
            "vector of length {} for K = {}",
            g.as_ref().len(),
            ordering.k()
        )));
    }
    Ok(())
}

fn kron_into(gammas: impl Iterator<Item = impl AsRef<[f64]>>, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    let mut next = Vec::new();
    for g in gammas {
        let g = g.as_ref();
        next.clear();
        for &p in out.iter() {
            next.extend(g.iter().map(|&v| p * v));
        }
        std::mem::swap(out, &mut next);
    }
}

/// `Ψ^M(γ_1, …, γ_M)`: the products of one entry from each vector, where
/// `gammas[0]` is the most recent state.
pub fn path_affiliation<G: AsRef<[f64]>>(gammas: &[G], ordering: &IndexOrdering) -> Result<DVector<f64>> {
    check_gammas(gammas, ordering)?;
    let mut out = Vec::with_capacity(ordering.len());
    kron_into(gammas.iter(), &mut out);
    Ok(DVector::from_vec(out))
}

/// Marginals of `psi` along each tuple position.
pub fn unpack_path_affiliation(psi: &[f64], ordering: &IndexOrdering) -> Result<Vec<DVector<f64>>> {
    if psi.len() != ordering.len() {
        return Err(Error::Dimension(format!(
            "path affiliation has {} entries, expected {}",
            psi.len(),
            ordering.len()
        )));
    }
    let mut out = vec![DVector::zeros(ordering.k()); ordering.depth()];
    for (i, &p) in psi.iter().enumerate() {
        for (m, marginal) in out.iter_mut().enumerate() {
            marginal[ordering.digit(i, m)] += p;
        }
    }
    Ok(out)
}

/// Binary `(M − 1)K × K^M` matrix mapping `Ψ^M(γ_1, …, γ_M)` to the stacked
/// vectors `γ_1, …, γ_{M−1}`.
pub fn memory_matrix_e(ordering: &IndexOrdering) -> Result<DMatrix<f64>> {
    let (k, m) = (ordering.k(), ordering.depth());
    if m < 2 {
        return Err(Error::NotApplicable("memory matrix needs depth at least 2".into()));
    }
    let mut e = DMatrix::zeros((m - 1) * k, ordering.len());
    for j in 0..ordering.len() {
        for lag in 0..m - 1 {
            e[(lag * k + ordering.digit(j, lag), j)] = 1.0;
        }
    }
    Ok(e)
}

/// Path affiliations for each time in `times`, built from the columns
/// `t, t − τ, …, t − (M − 1)τ` of the `K × T` series `gamma`.
pub fn path_affiliation_series(
    gamma: &DMatrix<f64>,
    ordering: &IndexOrdering,
    memory_lag: usize,
    times: &[usize],
) -> Result<DMatrix<f64>> {
    if gamma.nrows() != ordering.k() {
        return Err(Error::Dimension(format!(
            "series has {} rows for K = {}",
            gamma.nrows(),
            ordering.k()
        )));
    }
    let span = (ordering.depth() - 1) * memory_lag;
    if let Some(&t) = times.iter().find(|&&t| t < span || t >= gamma.ncols()) {
        return Err(Error::InsufficientData(format!("time {t} lacks history in a series of length {}", gamma.ncols())));
    }
    let n = ordering.len();
    let mut out = DMatrix::zeros(n, times.len());
    out.as_mut_slice().par_chunks_mut(n).zip(times.par_iter()).for_each_init(Vec::new, |buf, (col, &t)| {
        kron_into((0..ordering.depth()).map(|m| gamma.column(t - m * memory_lag)), buf);
        col.copy_from_slice(buf);
    });
    Ok(out)
}

/// Result of [`solve_mspa`].
#[derive(Debug, Clone)]
pub struct MspaFit {
    /// `K × K^M` propagator.
    pub lambda_hat: ColumnStochasticMatrix,
    /// `‖targets − Λ̂Ψ‖_F`.
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    /// Residual of the memoryless propagator fitted on the same pairs.
    pub spa2_residual: f64,
}

/// Fits the `K × K^M` propagator mapping the path affiliation at `t` to the
/// barycentric coordinates at `t + Δt`.
///
/// The solver starts from the memoryless fit on the same pairs lifted with
/// [`embed_spa2_as_mspa`], so the result is never worse than that fit.
pub fn solve_mspa(gamma: &DMatrix<f64>, mem: &MemoryConfig, cfg: &SpaIIConfig) -> Result<MspaFit> {
    let ordering = IndexOrdering::new(gamma.nrows(), mem.depth)?;
    let times = checked_training_times(gamma, mem)?;
    let psi = if mem.depth == 1 {
        DMatrix::zeros(0, 0)
    } else {
        path_affiliation_series(gamma, &ordering, mem.memory_lag, &times)?
    };
    fit_mspa(gamma, mem, cfg, psi.as_view())
}

pub(crate) fn checked_training_times(gamma: &DMatrix<f64>, mem: &MemoryConfig) -> Result<Vec<usize>> {
    let times: Vec<usize> = mem.training_times(gamma.ncols()).collect();
    if times.is_empty() {
        return Err(Error::InsufficientData(format!(
            "a series of length {} has no training pair for depth {}, lag {}, step {}",
            gamma.ncols(),
            mem.depth,
            mem.memory_lag,
            mem.forward_step
        )));
    }
    Ok(times)
}

/// [`solve_mspa`] with the path affiliations of the training times already
/// computed (ignored for depth one).
pub(crate) fn fit_mspa(
    gamma: &DMatrix<f64>,
    mem: &MemoryConfig,
    cfg: &SpaIIConfig,
    psi: DMatrixView<'_, f64>,
) -> Result<MspaFit> {
    let k = gamma.nrows();
    let times = checked_training_times(gamma, mem)?;
    let current = DMatrix::from_fn(k, times.len(), |i, p| gamma[(i, times[p])]);
    let targets = DMatrix::from_fn(k, times.len(), |i, p| gamma[(i, times[p] + mem.forward_step)]);
    let spa2 = spa2_from_matrices(&current, &targets, cfg)?;
    if mem.depth == 1 {
        return Ok(MspaFit {
            lambda_hat: spa2.matrix,
            residual: spa2.residual,
            iterations: spa2.iterations,
            history: spa2.history,
            spa2_residual: spa2.residual,
        });
    }
    if psi.ncols() != times.len() {
        return Err(Error::Dimension(format!(
            "{} path affiliations for {} training pairs",
            psi.ncols(),
            times.len()
        )));
    }
    let start = embed_spa2_as_mspa(&spa2.matrix, mem.depth)?;
    let fit = fit_column_stochastic(psi, &targets, Some(&start), cfg.fit_options())?;
    Ok(MspaFit {
        lambda_hat: fit.matrix,
        residual: fit.residual,
        iterations: fit.iterations,
        history: fit.history,
        spa2_residual: spa2.residual,
    })
}

/// The `K × K^M` matrix whose action on path affiliations equals the action
/// of `lambda` on the most recent state.
pub fn embed_spa2_as_mspa(lambda: &ColumnStochasticMatrix, depth: usize) -> Result<ColumnStochasticMatrix> {
    let k = lambda.nrows();
    if lambda.ncols() != k {
        return Err(Error::Dimension(format!("propagator is {}x{}, not square", k, lambda.ncols())));
    }
    let ordering = IndexOrdering::new(k, depth)?;
    let block = ordering.len() / k;
    let m = lambda.matrix();
    Ok(ColumnStochasticMatrix::from_projected(DMatrix::from_fn(k, ordering.len(), |r, c| m[(r, c / block)])))
}

/// One step of the closed dynamics on path affiliations: the next state is
/// `Λ̂ψ`, and the new path affiliation combines it with the first `M − 1`
/// marginals of `psi`.
pub fn closed_step(
    theta_top: &ColumnStochasticMatrix,
    psi: &[f64],
    ordering: &IndexOrdering,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if theta_top.nrows() != ordering.k() || theta_top.ncols() != ordering.len() {
        return Err(Error::Dimension(format!(
            "propagator is {}x{}, expected {}x{}",
            theta_top.nrows(),
            theta_top.ncols(),
            ordering.k(),
            ordering.len()
        )));
    }
    let next_gamma = theta_top.apply(psi)?;
    let mut history = unpack_path_affiliation(psi, ordering)?;
    history.pop();
    // rounding in the marginals would otherwise compound from step to step
    history.iter_mut().for_each(|g| renormalize(g.as_mut_slice()));
    history.insert(0, next_gamma.clone());
    let mut next = Vec::with_capacity(ordering.len());
    kron_into(history.iter().map(|g| g.as_slice()), &mut next);
    Ok((next_gamma, DVector::from_vec(next)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::is_stochastic;
    use crate::spa::{consecutive_pairs, solve_spa2};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stochastic(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ColumnStochasticMatrix {
        let mut m = DMatrix::zeros(rows, cols);
        for j in 0..cols {
            m.set_column(j, &DVector::from_vec(random_stochastic(rng, rows)));
        }
        ColumnStochasticMatrix::new(m).unwrap()
    }

    fn history(rng: &mut ChaCha8Rng, k: usize, m: usize) -> Vec<Vec<f64>> {
        (0..m).map(|_| random_stochastic(rng, k)).collect()
    }

    #[test]
    fn two_by_two_example_order() {
        let (a, b) = (0.3, 0.8);
        let ord = IndexOrdering::new(2, 2).unwrap();
        let psi = path_affiliation(&[vec![a, 1.0 - a], vec![b, 1.0 - b]], &ord).unwrap();
        let expected = [a * b, a * (1.0 - b), (1.0 - a) * b, (1.0 - a) * (1.0 - b)];
        for (p, e) in psi.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn vertex_path_is_a_vertex() {
        let ord = IndexOrdering::new(3, 4).unwrap();
        let e1 = vec![1.0, 0.0, 0.0];
        let psi = path_affiliation(&vec![e1; 4], &ord).unwrap();
        assert_eq!(psi[0], 1.0);
        assert_eq!(psi.iter().sum::<f64>(), 1.0);
        assert_eq!(unpack_path_affiliation(&[1.0, 0.0, 0.0, 0.0], &IndexOrdering::new(2, 2).unwrap()).unwrap(), vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0])
        ]);
    }

    #[test]
    fn ordering_round_trips() {
        let ord = IndexOrdering::new(3, 4).unwrap();
        assert_eq!(ord.len(), 81);
        assert_eq!(ord.tuple(5), vec![0, 0, 1, 2]);
        for i in 0..ord.len() {
            assert_eq!(ord.index(&ord.tuple(i)), i);
        }
    }

    #[test]
    fn oversized_configurations_rejected() {
        assert!(IndexOrdering::new(10, 8).is_ok());
        assert!(IndexOrdering::new(10, 9).is_err());
        assert!(IndexOrdering::new(usize::MAX, 3).is_err());
        assert!(MemoryConfig::new(0, 1, 1).is_err());
        assert!(MemoryConfig::new(2, 0, 1).is_err());
        assert!(MemoryConfig::new(2, 10, 3).is_err());
        assert!(MemoryConfig::new(1, 1, 3).is_ok());
    }

    #[test]
    fn wrong_lengths_rejected() {
        let ord = IndexOrdering::new(2, 2).unwrap();
        assert!(matches!(path_affiliation(&[vec![1.0, 0.0]], &ord), Err(Error::Dimension(_))));
        assert!(matches!(path_affiliation(&[vec![1.0, 0.0], vec![1.0]], &ord), Err(Error::Dimension(_))));
        assert!(unpack_path_affiliation(&[1.0], &ord).is_err());
    }

    #[test]
    fn e_matrix_small_case() {
        let ord = IndexOrdering::new(2, 2).unwrap();
        let e = memory_matrix_e(&ord).unwrap();
        assert_eq!(e, DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]));
        assert!(matches!(memory_matrix_e(&IndexOrdering::new(3, 1).unwrap()), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn e_matrix_row_sums() {
        let ord = IndexOrdering::new(3, 4).unwrap();
        let e = memory_matrix_e(&ord).unwrap();
        assert_eq!(e.shape(), (9, 81));
        for row in e.row_iter() {
            assert_eq!(row.sum(), 27.0);
        }
    }

    #[test]
    fn embedding_of_identity() {
        let e = embed_spa2_as_mspa(&ColumnStochasticMatrix::identity(2), 2).unwrap();
        assert_eq!(e.matrix(), &DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]));
    }

    #[test]
    fn embedded_propagator_acts_on_latest_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let k = rng.gen_range(1..5);
            let m = rng.gen_range(1..5);
            let lambda = random_matrix(&mut rng, k, k);
            let ord = IndexOrdering::new(k, m).unwrap();
            let hist = history(&mut rng, k, m);
            let psi = path_affiliation(&hist, &ord).unwrap();
            let hat = embed_spa2_as_mspa(&lambda, m).unwrap();
            assert!(hat.matrix().column_iter().all(|c| is_stochastic(c.as_slice())));
            let lhs = hat.matrix() * &psi;
            let rhs = lambda.matrix() * DVector::from_column_slice(&hist[0]);
            assert!((lhs - rhs).amax() <= 1e-12);
        }
    }

    #[test]
    fn closed_dynamics_of_embedding_follow_plain_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (k, m) = (3, 4);
        let lambda = random_matrix(&mut rng, k, k);
        let hat = embed_spa2_as_mspa(&lambda, m).unwrap();
        let ord = IndexOrdering::new(k, m).unwrap();
        let hist = history(&mut rng, k, m);
        let mut psi = path_affiliation(&hist, &ord).unwrap();
        let mut g = DVector::from_column_slice(&hist[0]);
        for _ in 0..50 {
            let (next_g, next_psi) = closed_step(&hat, psi.as_slice(), &ord).unwrap();
            g = lambda.apply(g.as_slice()).unwrap();
            assert!((&next_g - &g).amax() < 1e-12);
            psi = next_psi;
        }
    }

    #[test]
    fn series_matches_direct_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ord = IndexOrdering::new(2, 3).unwrap();
        let mut gamma = DMatrix::zeros(2, 12);
        for t in 0..12 {
            gamma.set_column(t, &DVector::from_vec(random_stochastic(&mut rng, 2)));
        }
        let psi = path_affiliation_series(&gamma, &ord, 2, &[4, 11]).unwrap();
        let direct = path_affiliation(&[gamma.column(11), gamma.column(9), gamma.column(7)].map(|c| c.iter().copied().collect::<Vec<_>>()), &ord).unwrap();
        assert_eq!(psi.column(1), direct.column(0));
        assert!(path_affiliation_series(&gamma, &ord, 2, &[3]).is_err());
    }

    fn random_series(rng: &mut ChaCha8Rng, k: usize, t: usize) -> DMatrix<f64> {
        let mut gamma = DMatrix::zeros(k, t);
        for c in 0..t {
            gamma.set_column(c, &DVector::from_vec(random_stochastic(rng, k)));
        }
        gamma
    }

    #[test]
    fn depth_one_is_the_memoryless_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let gamma = random_series(&mut rng, 3, 40);
        let cfg = SpaIIConfig::default();
        let fit = solve_mspa(&gamma, &MemoryConfig::memoryless(), &cfg).unwrap();
        let spa2 = solve_spa2(&gamma, &consecutive_pairs(40), &cfg).unwrap();
        assert_eq!(fit.lambda_hat, spa2.matrix);
        assert_eq!(fit.residual, spa2.residual);
    }

    #[test]
    fn recovers_known_memory_propagator() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (k, m) = (2, 2);
        let ord = IndexOrdering::new(k, m).unwrap();
        let truth = random_matrix(&mut rng, k, ord.len());
        let mut gamma = DMatrix::zeros(k, 300);
        gamma.set_column(0, &DVector::from_vec(random_stochastic(&mut rng, k)));
        gamma.set_column(1, &DVector::from_vec(random_stochastic(&mut rng, k)));
        for t in 2..300 {
            let next = if t % 3 == 0 {
                // fresh states keep the series from settling
                DVector::from_vec(random_stochastic(&mut rng, k))
            } else {
                let psi = path_affiliation(&[gamma.column(t - 1).clone_owned(), gamma.column(t - 2).clone_owned()].map(|c| c.as_slice().to_vec()), &ord).unwrap();
                truth.matrix() * psi
            };
            gamma.set_column(t, &next);
        }
        // only pairs produced by the true propagator
        let times: Vec<usize> = (1..299).filter(|t| (t + 1) % 3 != 0).collect();
        let psi = path_affiliation_series(&gamma, &ord, 1, &times).unwrap();
        let targets = DMatrix::from_fn(k, times.len(), |i, p| gamma[(i, times[p] + 1)]);
        let cfg = SpaIIConfig { tol: 1e-14, max_iter: 20000, ..Default::default() };
        let fit = fit_column_stochastic(psi.as_view(), &targets, None, cfg.fit_options()).unwrap();
        assert!(fit.residual <= 1e-6, "residual {}", fit.residual);
    }

    #[test]
    fn insufficient_series_rejected() {
        let gamma = DMatrix::from_element(2, 5, 0.5);
        let mem = MemoryConfig::new(3, 2, 1).unwrap();
        assert!(matches!(solve_mspa(&gamma, &mem, &SpaIIConfig::default()), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn path_affiliations_are_stochastic(seed in 0u64..100_000, k in 1usize..5, m in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ord = IndexOrdering::new(k, m).unwrap();
            let psi = path_affiliation(&history(&mut rng, k, m), &ord).unwrap();
            prop_assert!(psi.len() == ord.len());
            prop_assert!(is_stochastic(psi.as_slice()));
            prop_assert!((psi.sum() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn unpack_inverts_path_affiliation(seed in 0u64..100_000, k in 1usize..5, m in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ord = IndexOrdering::new(k, m).unwrap();
            let hist = history(&mut rng, k, m);
            let back = unpack_path_affiliation(path_affiliation(&hist, &ord).unwrap().as_slice(), &ord).unwrap();
            for (a, b) in back.iter().zip(&hist) {
                prop_assert!((a - DVector::from_column_slice(b)).amax() <= 1e-12);
            }
        }

        #[test]
        fn unpack_of_any_stochastic_vector_is_stochastic(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ord = IndexOrdering::new(3, 3).unwrap();
            let psi = random_stochastic(&mut rng, ord.len());
            for g in unpack_path_affiliation(&psi, &ord).unwrap() {
                prop_assert!(is_stochastic(g.as_slice()));
            }
        }

        #[test]
        fn e_matrix_extracts_history(seed in 0u64..100_000, k in 1usize..4, m in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ord = IndexOrdering::new(k, m).unwrap();
            let hist = history(&mut rng, k, m);
            let stacked = memory_matrix_e(&ord).unwrap() * path_affiliation(&hist, &ord).unwrap();
            for lag in 0..m - 1 {
                for v in 0..k {
                    prop_assert!((stacked[lag * k + v] - hist[lag][v]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn depth_recursion(seed in 0u64..100_000, k in 1usize..4, m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hist = history(&mut rng, k, m + 1);
            let long = path_affiliation(&hist, &IndexOrdering::new(k, m + 1).unwrap()).unwrap();
            let short = path_affiliation(&hist[..m], &IndexOrdering::new(k, m).unwrap()).unwrap();
            let ord2 = IndexOrdering::new(short.len(), 1).unwrap();
            // Ψ²(ψ, γ) as an outer product of a K^M and a K vector
            let mut nested = Vec::new();
            for &p in short.iter() {
                nested.extend(hist[m].iter().map(|&v| p * v));
            }
            prop_assert!(ord2.len() * k == long.len());
            for (a, b) in long.iter().zip(&nested) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn closed_step_is_quadratic(seed in 0u64..100_000, k in 1usize..4, m in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ord = IndexOrdering::new(k, m).unwrap();
            let theta = random_matrix(&mut rng, k, ord.len());
            let psi = path_affiliation(&history(&mut rng, k, m), &ord).unwrap();
            let (g, next) = closed_step(&theta, psi.as_slice(), &ord).unwrap();
            prop_assert!(is_stochastic(next.as_slice()));
            let lam_psi = theta.matrix() * &psi;
            let block = ord.len() / k;
            for idx in 0..ord.len() {
                let (i, rest) = (idx / block, idx % block);
                // ψ_{t−1} entries whose first M − 1 indices equal `rest`
                let partial: f64 = (0..k).map(|j| psi[rest * k + j]).sum();
                prop_assert!((next[idx] - partial * lam_psi[i]).abs() <= 1e-12);
                prop_assert!((g[i] - lam_psi[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn closed_dynamics_stay_on_the_simplex(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ord = IndexOrdering::new(3, 3).unwrap();
            let theta = random_matrix(&mut rng, 3, ord.len());
            let mut psi = path_affiliation(&history(&mut rng, 3, 3), &ord).unwrap();
            for _ in 0..500 {
                psi = closed_step(&theta, psi.as_slice(), &ord).unwrap().1;
                prop_assert!(is_stochastic(psi.as_slice()));
            }
        }

        #[test]
        fn memory_never_loses_to_memoryless(seed in 0u64..100_000, m in 2usize..4, lag in 1usize..3, step in 1usize..3) {
            let lag = lag * step;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gamma = random_series(&mut rng, 3, 40);
            let mem = MemoryConfig::new(m, lag, step).unwrap();
            let fit = solve_mspa(&gamma, &mem, &SpaIIConfig::default()).unwrap();
            prop_assert!(fit.residual <= fit.spa2_residual * (1.0 + 1e-12));
            let times: Vec<usize> = mem.training_times(40).collect();
            let pairs: Vec<(usize, usize)> = times.iter().map(|&t| (t, t + step)).collect();
            let direct = solve_spa2(&gamma, &pairs, &SpaIIConfig::default()).unwrap();
            prop_assert!(fit.residual <= direct.residual * (1.0 + 1e-12));
        }
    }
}
