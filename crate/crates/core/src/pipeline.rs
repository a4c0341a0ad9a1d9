//! Training and forecasting with a learning polytope, a lifting polytope and
//! two memory propagators.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::memory::{checked_training_times, fit_mspa, path_affiliation_series, IndexOrdering, MemoryConfig};
use crate::simplex::{renormalize, ColumnStochasticMatrix};
use crate::solver::fit_column_stochastic;
use crate::spa::{project_series, solve_spa1, SpaIIConfig};

/// Per-coordinate affine map of the training range onto `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InsufficientData("no columns to normalize".into()));
        }
        ensure_finite(data.iter(), "data")?;
        let min = data.row_iter().map(|r| r.min()).collect();
        let max = data.row_iter().map(|r| r.max()).collect();
        Ok(Self { min, max })
    }

    /// The identity map on `[−1, 1]^d`.
    pub fn identity(d: usize) -> Self {
        Self { min: vec![-1.0; d], max: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn check(&self, rows: usize) -> Result<()> {
        if rows != self.dim() {
            return Err(Error::Dimension(format!("{} rows, normalization is {}-dimensional", rows, self.dim())));
        }
        Ok(())
    }

    pub fn forward(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(data.nrows())?;
        Ok(DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            let (lo, hi) = (self.min[i], self.max[i]);
            if hi > lo {
                2.0 * (data[(i, j)] - lo) / (hi - lo) - 1.0
            } else {
                0.0
            }
        }))
    }

    pub fn inverse(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(data.nrows())?;
        Ok(DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            let (lo, hi) = (self.min[i], self.max[i]);
            if hi > lo {
                lo + (data[(i, j)] + 1.0) * 0.5 * (hi - lo)
            } else {
                lo
            }
        }))
    }
}

/// A trained forecasting model.
#[derive(Debug, Clone, PartialEq)]
pub struct MspaModel {
    pub normalization: Normalization,
    /// `D × K` learning polytope (normalized coordinates).
    pub sigma_learn: DMatrix<f64>,
    /// `D × K′` lifting polytope (normalized coordinates).
    pub sigma_lift: DMatrix<f64>,
    /// `K × K^M` propagator.
    pub lambda_hat: ColumnStochasticMatrix,
    /// `K′ × K^M` lifting map.
    pub lambda_lift: ColumnStochasticMatrix,
    pub mem: MemoryConfig,
}

impl MspaModel {
    pub fn new(
        normalization: Normalization,
        sigma_learn: DMatrix<f64>,
        sigma_lift: DMatrix<f64>,
        lambda_hat: ColumnStochasticMatrix,
        lambda_lift: ColumnStochasticMatrix,
        mem: MemoryConfig,
    ) -> Result<Self> {
        let d = normalization.dim();
        let k = sigma_learn.ncols();
        let ordering = IndexOrdering::new(k, mem.depth)?;
        let ok = sigma_learn.nrows() == d
            && sigma_lift.nrows() == d
            && lambda_hat.nrows() == k
            && lambda_hat.ncols() == ordering.len()
            && lambda_lift.nrows() == sigma_lift.ncols()
            && lambda_lift.ncols() == ordering.len();
        if !ok {
            return Err(Error::Dimension("model components have inconsistent shapes".into()));
        }
        ensure_finite(sigma_learn.iter().chain(sigma_lift.iter()), "polytope")?;
        Ok(Self { normalization, sigma_learn, sigma_lift, lambda_hat, lambda_lift, mem })
    }

    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }

    pub fn k(&self) -> usize {
        self.sigma_learn.ncols()
    }

    pub fn k_lift(&self) -> usize {
        self.sigma_lift.ncols()
    }
}

/// Residuals of the four sub-problems solved by [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub learn_objective: f64,
    pub lift_objective: f64,
    pub mspa_residual: f64,
    pub spa2_residual: f64,
    pub lift_residual: f64,
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct Training {
    pub model: MspaModel,
    pub report: TrainReport,
    /// `K × T` coordinates of the training data in the learning polytope.
    pub gamma: DMatrix<f64>,
    /// `K′ × T` coordinates of the training data in the lifting polytope.
    pub gamma_lift: DMatrix<f64>,
}

/// Fits both polytopes, the propagator and the lifting map to a `D × T`
/// trajectory.
pub fn train(data: &DMatrix<f64>, k: usize, k_lift: usize, mem: &MemoryConfig, cfg: &SpaIIConfig) -> Result<Training> {
    let normalization = Normalization::fit(data)?;
    let x = normalization.forward(data)?;
    let ordering = IndexOrdering::new(k, mem.depth)?;
    let learn = solve_spa1(&x, k, cfg)?;
    checked_training_times(&learn.gamma, mem)?;
    let lift = solve_spa1(&x, k_lift, cfg)?;
    let (sigma_learn, sigma_lift) = (learn.sigma, lift.sigma);
    train_from_polytopes(normalization, &x, sigma_learn, learn.gamma, sigma_lift, lift.gamma, &ordering, mem, cfg).map(
        |mut t| {
            t.report.learn_objective = learn.objective;
            t.report.lift_objective = lift.objective;
            t
        },
    )
}

/// [`train`] with the polytopes and the coordinates in them already fixed.
/// `x` is the normalized data and is only used for its length.
#[allow(clippy::too_many_arguments)]
pub fn train_from_polytopes(
    normalization: Normalization,
    x: &DMatrix<f64>,
    sigma_learn: DMatrix<f64>,
    gamma: DMatrix<f64>,
    sigma_lift: DMatrix<f64>,
    gamma_lift: DMatrix<f64>,
    ordering: &IndexOrdering,
    mem: &MemoryConfig,
    cfg: &SpaIIConfig,
) -> Result<Training> {
    let t_len = x.ncols();
    if gamma.ncols() != t_len || gamma_lift.ncols() != t_len {
        return Err(Error::Dimension("coordinate series do not match the data length".into()));
    }
    let span = mem.history_span();
    if span >= t_len {
        return Err(Error::InsufficientData(format!("{t_len} samples cannot fill a history of {span} steps")));
    }
    // Every time with a full history feeds the lifting map; the first
    // T − Δt − span of them also have a target for the propagator.
    let all_times: Vec<usize> = (span..t_len).collect();
    let psi = if mem.depth == 1 {
        gamma.columns(span, t_len - span).clone_owned()
    } else {
        path_affiliation_series(&gamma, ordering, mem.memory_lag, &all_times)?
    };
    let n_train = checked_training_times(&gamma, mem)?.len();
    let mspa = fit_mspa(&gamma, mem, cfg, psi.columns(0, n_train))?;
    let lift_targets = gamma_lift.columns(span, t_len - span).clone_owned();
    let lift = fit_column_stochastic(psi.as_view(), &lift_targets, None, cfg.fit_options())?;
    let report = TrainReport {
        learn_objective: f64::NAN,
        lift_objective: f64::NAN,
        mspa_residual: mspa.residual,
        spa2_residual: mspa.spa2_residual,
        lift_residual: lift.residual,
    };
    let model = MspaModel::new(normalization, sigma_learn, sigma_lift, mspa.lambda_hat, lift.matrix, *mem)?;
    Ok(Training { model, report, gamma, gamma_lift })
}

/// Barycentric coordinates of raw states in the learning polytope.
pub fn encode(model: &MspaModel, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = model.normalization.forward(states)?;
    project_series(&model.sigma_learn, &x)
}

/// Ring buffer of barycentric states at forward-step spacing.
struct History {
    buf: VecDeque<DVector<f64>>,
    stride: usize,
    depth: usize,
    scratch: Vec<f64>,
    next: Vec<f64>,
}

impl History {
    fn new(model: &MspaModel, warmup: &DMatrix<f64>) -> Result<Self> {
        let mem = model.mem;
        let need = mem.history_span() + 1;
        if warmup.nrows() != model.k() {
            return Err(Error::Dimension(format!("warmup has {} rows for K = {}", warmup.nrows(), model.k())));
        }
        if warmup.ncols() < need {
            return Err(Error::InsufficientData(format!(
                "warmup has {} states, the memory needs {need}",
                warmup.ncols()
            )));
        }
        let stride = if mem.depth == 1 { 1 } else { mem.memory_lag / mem.forward_step };
        let last = warmup.ncols() - 1;
        // newest first
        let len = (mem.depth - 1) * stride + 1;
        let mut buf = VecDeque::with_capacity(len);
        for j in 0..len {
            let mut g = warmup.column(last - j * mem.forward_step).clone_owned();
            renormalize(g.as_mut_slice());
            buf.push_back(g);
        }
        Ok(Self { buf, stride, depth: mem.depth, scratch: Vec::new(), next: Vec::new() })
    }

    fn psi(&mut self) -> &[f64] {
        self.scratch.clear();
        self.scratch.push(1.0);
        for m in 0..self.depth {
            let g = &self.buf[m * self.stride];
            self.next.clear();
            for &p in &self.scratch {
                self.next.extend(g.iter().map(|&v| p * v));
            }
            std::mem::swap(&mut self.scratch, &mut self.next);
        }
        &self.scratch
    }

    fn push(&mut self, g: DVector<f64>) {
        self.buf.pop_back();
        self.buf.push_front(g);
    }
}

/// Propagates the learning-polytope coordinates `horizon` forward steps past
/// the last warmup column. Returns `K × horizon`.
pub fn predict_barycentric(model: &MspaModel, warmup_gammas: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(model.k(), horizon);
    let mut hist = History::new(model, warmup_gammas)?;
    for h in 0..horizon {
        let next = model.lambda_hat.apply(hist.psi())?;
        out.set_column(h, &next);
        hist.push(next);
    }
    Ok(out)
}

/// Forecast in the original coordinates: `horizon` states, one per forward
/// step, following the last column of `warmup` (`D × W` raw states).
pub fn predict(model: &MspaModel, warmup: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    if warmup.nrows() != model.dim() {
        return Err(Error::Dimension(format!(
            "warmup states have {} coordinates, model expects {}",
            warmup.nrows(),
            model.dim()
        )));
    }
    let need = model.mem.history_span() + 1;
    if warmup.ncols() < need {
        return Err(Error::InsufficientData(format!("warmup has {} states, the memory needs {need}", warmup.ncols())));
    }
    // Only the states that enter the memory need encoding.
    let tail = warmup.columns(warmup.ncols() - need, need).clone_owned();
    let gammas = encode(model, &tail)?;
    predict_from_gammas(model, &gammas, horizon)
}

/// [`predict`] starting from coordinates in the learning polytope.
pub fn predict_from_gammas(model: &MspaModel, warmup_gammas: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    forecast(model, warmup_gammas, horizon).map(|(_, states)| states)
}

/// One rollout giving both the `K × horizon` learning-polytope coordinates
/// and the `D × horizon` lifted states in original units.
pub fn forecast(
    model: &MspaModel,
    warmup_gammas: &DMatrix<f64>,
    horizon: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut gammas = DMatrix::zeros(model.k(), horizon);
    let mut lifted = DMatrix::zeros(model.k_lift(), horizon);
    let mut hist = History::new(model, warmup_gammas)?;
    for h in 0..horizon {
        let next = model.lambda_hat.apply(hist.psi())?;
        gammas.set_column(h, &next);
        hist.push(next);
        let g_lift = model.lambda_lift.apply(hist.psi())?;
        lifted.set_column(h, &g_lift);
    }
    let states = model.normalization.inverse(&(&model.sigma_lift * lifted))?;
    Ok((gammas, states))
}

pub const MODEL_FORMAT: &str = "mspa-model/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixText {
    rows: usize,
    cols: usize,
    /// Row-major.
    entries: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizationText {
    min: Vec<String>,
    max: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemoryText {
    depth: usize,
    memory_lag: usize,
    forward_step: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelText {
    format: String,
    normalization: NormalizationText,
    memory: MemoryText,
    sigma_learn: MatrixText,
    sigma_lift: MatrixText,
    lambda_hat: MatrixText,
    lambda_lift: MatrixText,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

fn parse_vec(v: &[String]) -> Result<Vec<f64>> {
    v.iter().map(|s| parse_num(s)).collect()
}

impl MatrixText {
    fn from(m: &DMatrix<f64>) -> Self {
        let entries = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|ij| num(m[ij])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), entries }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rows.checked_mul(self.cols) != Some(self.entries.len()) {
            return Err(Error::Format(format!(
                "{}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.entries.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &parse_vec(&self.entries)?))
    }
}

impl MspaModel {
    /// Serializes the model; numbers are written with 17 significant digits
    /// so that reading them back is exact.
    pub fn to_text(&self) -> String {
        let doc = ModelText {
            format: MODEL_FORMAT.into(),
            normalization: NormalizationText {
                min: self.normalization.min.iter().map(|&v| num(v)).collect(),
                max: self.normalization.max.iter().map(|&v| num(v)).collect(),
            },
            memory: MemoryText {
                depth: self.mem.depth,
                memory_lag: self.mem.memory_lag,
                forward_step: self.mem.forward_step,
            },
            sigma_learn: MatrixText::from(&self.sigma_learn),
            sigma_lift: MatrixText::from(&self.sigma_lift),
            lambda_hat: MatrixText::from(self.lambda_hat.matrix()),
            lambda_lift: MatrixText::from(self.lambda_lift.matrix()),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: ModelText = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unsupported format {:?}", doc.format)));
        }
        let normalization = Normalization {
            min: parse_vec(&doc.normalization.min)?,
            max: parse_vec(&doc.normalization.max)?,
        };
        if normalization.min.len() != normalization.max.len()
            || normalization.min.iter().zip(&normalization.max).any(|(a, b)| !(a <= b))
        {
            return Err(Error::Format("invalid normalization ranges".into()));
        }
        let mem = MemoryConfig::new(doc.memory.depth, doc.memory.memory_lag, doc.memory.forward_step)?;
        let stochastic = |m: &MatrixText| {
            ColumnStochasticMatrix::new(m.to_matrix()?).map_err(|e| Error::Format(format!("propagator: {e}")))
        };
        Self::new(
            normalization,
            doc.sigma_learn.to_matrix()?,
            doc.sigma_lift.to_matrix()?,
            stochastic(&doc.lambda_hat)?,
            stochastic(&doc.lambda_lift)?,
            mem,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::embed_spa2_as_mspa;
    use crate::simplex::dominant_eigvec_stochastic;
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

    /// A noisy loop in the plane, embedded in three dimensions.
    fn circle_data(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(3, n, |i, t| {
            let a = t as f64 * 0.3;
            match i {
                0 => 2.0 + a.cos(),
                1 => -1.0 + 0.5 * a.sin(),
                _ => 0.1 * (1.7 * a).sin(),
            }
        })
    }

    fn toy_model(rng: &mut ChaCha8Rng, k: usize, k_lift: usize, mem: MemoryConfig) -> MspaModel {
        let ord = IndexOrdering::new(k, mem.depth).unwrap();
        MspaModel::new(
            Normalization { min: vec![0.0, -2.0, 5.0], max: vec![1.0, 3.0, 5.0] },
            DMatrix::from_fn(3, k, |_, _| rng.gen::<f64>() * 2.0 - 1.0),
            DMatrix::from_fn(3, k_lift, |_, _| rng.gen::<f64>() * 2.0 - 1.0),
            random_matrix(rng, k, ord.len()),
            random_matrix(rng, k_lift, ord.len()),
            mem,
        )
        .unwrap()
    }

    #[test]
    fn normalization_round_trip_and_range() {
        let mut data = circle_data(50);
        data.row_mut(2).fill(4.2);
        let n = Normalization::fit(&data).unwrap();
        let x = n.forward(&data).unwrap();
        assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(x.row(2).iter().all(|&v| v == 0.0));
        assert!((x.row(0).max() - 1.0).abs() < 1e-15 && (x.row(0).min() + 1.0).abs() < 1e-15);
        let back = n.inverse(&x).unwrap();
        assert!((back - data).amax() <= 1e-12);
    }

    #[test]
    fn identical_polytopes_give_exact_lifting() {
        let data = circle_data(200);
        let cfg = SpaIIConfig::default();
        let norm = Normalization::fit(&data).unwrap();
        let x = norm.forward(&data).unwrap();
        let sol = solve_spa1(&x, 3, &cfg).unwrap();
        let ord = IndexOrdering::new(3, 1).unwrap();
        let mem = MemoryConfig::memoryless();
        let t = train_from_polytopes(
            norm,
            &x,
            sol.sigma.clone(),
            sol.gamma.clone(),
            sol.sigma.clone(),
            sol.gamma.clone(),
            &ord,
            &mem,
            &cfg,
        )
        .unwrap();
        assert!(t.report.lift_residual <= 1e-8, "{}", t.report.lift_residual);
    }

    #[test]
    fn train_reports_consistent_residuals() {
        let data = circle_data(300);
        let mem = MemoryConfig::new(3, 2, 1).unwrap();
        let t = train(&data, 3, 4, &mem, &SpaIIConfig { restarts: 2, ..Default::default() }).unwrap();
        assert_eq!(t.model.lambda_hat.ncols(), 27);
        assert_eq!(t.model.lambda_lift.nrows(), 4);
        assert!(t.report.mspa_residual <= t.report.spa2_residual * (1.0 + 1e-12));
        assert!(t.report.learn_objective >= t.report.lift_objective * 0.999);
        let pred = predict(&t.model, &data.columns(0, 10).clone_owned(), 40).unwrap();
        assert_eq!(pred.shape(), (3, 40));
    }

    #[test]
    fn horizon_zero_and_short_warmup() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = toy_model(&mut rng, 2, 3, MemoryConfig::new(3, 2, 1).unwrap());
        let warm = DMatrix::from_element(3, 5, 0.5);
        assert_eq!(predict(&model, &warm, 0).unwrap().ncols(), 0);
        assert!(matches!(
            predict(&model, &DMatrix::from_element(3, 4, 0.5), 3),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(predict(&model, &DMatrix::from_element(2, 5, 0.5), 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn predictions_stay_in_the_lifting_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = toy_model(&mut rng, 3, 4, MemoryConfig::new(3, 2, 2).unwrap());
        let warm = DMatrix::from_fn(3, 7, |_, _| rng.gen::<f64>() * 10.0 - 5.0);
        let pred = predict(&model, &warm, 2000).unwrap();
        let hull = model.normalization.inverse(&model.sigma_lift).unwrap();
        for i in 0..3 {
            let (lo, hi) = (hull.row(i).min(), hull.row(i).max());
            assert!(pred.row(i).iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
        }
    }

    #[test]
    fn memoryless_identity_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = toy_model(&mut rng, 3, 3, MemoryConfig::memoryless());
        model.lambda_hat = ColumnStochasticMatrix::identity(3);
        let g = DMatrix::from_column_slice(3, 1, &[0.2, 0.3, 0.5]);
        let out = predict_barycentric(&model, &g, 10).unwrap();
        for c in out.column_iter() {
            assert!((c - g.column(0)).amax() < 1e-15);
        }
    }

    #[test]
    fn memoryless_rollout_reaches_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = toy_model(&mut rng, 4, 3, MemoryConfig::memoryless());
        let g = DMatrix::from_column_slice(4, 1, &random_stochastic(&mut rng, 4));
        let out = predict_barycentric(&model, &g, 500).unwrap();
        let diff = (out.column(499) - out.column(498)).norm();
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn memoryless_pipeline_matches_plain_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = toy_model(&mut rng, 3, 3, MemoryConfig::memoryless());
        let g0 = random_stochastic(&mut rng, 3);
        let out = predict_barycentric(&model, &DMatrix::from_column_slice(3, 1, &g0), 50).unwrap();
        let mut g = DVector::from_vec(g0);
        for c in out.column_iter() {
            g = model.lambda_hat.apply(g.as_slice()).unwrap();
            assert_eq!(c, g.column(0));
        }
    }

    #[test]
    fn embedded_model_converges_to_stationary_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (k, m) = (3, 3);
        let lambda = random_matrix(&mut rng, k, k);
        let fp = dominant_eigvec_stochastic(&lambda, 1e-14, 100_000).unwrap();
        let sigma = DMatrix::from_fn(3, k, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let model = MspaModel::new(
            Normalization { min: vec![-3.0, 0.0, 1.0], max: vec![3.0, 2.0, 1.5] },
            sigma.clone(),
            sigma.clone(),
            embed_spa2_as_mspa(&lambda, m).unwrap(),
            embed_spa2_as_mspa(&ColumnStochasticMatrix::identity(k), m).unwrap(),
            MemoryConfig::new(m, 1, 1).unwrap(),
        )
        .unwrap();
        let warm = DMatrix::from_fn(k, m, |_, _| rng.gen::<f64>());
        let warm = DMatrix::from_columns(
            &warm.column_iter().map(|c| c / c.sum()).collect::<Vec<_>>(),
        );
        let pred = predict_from_gammas(&model, &warm, 3000).unwrap();
        let target = model.normalization.inverse(&(&sigma * DMatrix::from_column_slice(k, 1, fp.vector.as_slice()))).unwrap();
        assert!((pred.column(2999) - target.column(0)).norm() < 1e-6);
    }

    #[test]
    fn forecast_matches_separate_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = toy_model(&mut rng, 3, 4, MemoryConfig::new(2, 2, 1).unwrap());
        let warm = DMatrix::from_fn(3, 3, |_, _| rng.gen::<f64>());
        let warm = DMatrix::from_columns(&warm.column_iter().map(|c| c / c.sum()).collect::<Vec<_>>());
        let (g, x) = forecast(&model, &warm, 30).unwrap();
        assert_eq!(g, predict_barycentric(&model, &warm, 30).unwrap());
        assert_eq!(x, predict_from_gammas(&model, &warm, 30).unwrap());
    }

    #[test]
    fn model_text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = toy_model(&mut rng, 2, 3, MemoryConfig::new(2, 3, 1).unwrap());
        let text = model.to_text();
        assert!(text.contains(MODEL_FORMAT));
        let back = MspaModel::from_text(&text).unwrap();
        assert_eq!(back, model);
        let warm = DMatrix::from_fn(3, 4, |_, _| rng.gen::<f64>());
        assert_eq!(predict(&back, &warm, 20).unwrap(), predict(&model, &warm, 20).unwrap());
    }

    #[test]
    fn model_text_rejects_bad_documents() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let text = toy_model(&mut rng, 2, 3, MemoryConfig::memoryless()).to_text();
        assert!(matches!(
            MspaModel::from_text(&text.replace(MODEL_FORMAT, "other/9")),
            Err(Error::Format(_))
        ));
        assert!(matches!(MspaModel::from_text("{}"), Err(Error::Format(_))));
        let extra = text.replacen('{', "{\"surprise\": 1,", 1);
        assert!(matches!(MspaModel::from_text(&extra), Err(Error::Format(_))));
    }
}
