//! Grid studies over memory lag, polytope scaling, memory depth and `K`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use mspa::memory::{IndexOrdering, MemoryConfig};
use mspa::metrics::hausdorff;
use mspa::pipeline::{forecast, train_from_polytopes, Normalization};
use mspa::spa::{project_series, solve_spa1, SpaIIConfig};

use crate::table::format_value;
use crate::{CliError, Result};

fn one() -> usize {
    1
}

fn default_max_iter() -> usize {
    SpaIIConfig::default().max_iter
}

fn default_restarts() -> usize {
    SpaIIConfig::default().restarts
}

fn default_tol() -> f64 {
    SpaIIConfig::default().tol
}

/// Contents of a sweep configuration file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Trajectory CSV; relative paths are resolved against the config file.
    pub data: PathBuf,
    pub k: Vec<usize>,
    pub k_lift: usize,
    pub depth: Vec<usize>,
    /// Memory lags in raw steps.
    pub lag: Vec<usize>,
    /// Factors applied to the vertices' offsets from their centroid.
    pub scale: Vec<f64>,
    #[serde(default = "one")]
    pub forward: usize,
    /// Forecast length; the data length when absent.
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Iteration cap for the propagator and lifting fits; `max_iter` when
    /// absent.
    pub fit_max_iter: Option<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl SweepConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: SweepConfig = toml::from_str(text).map_err(|e| CliError::parse(origin, e))?;
        if cfg.data.is_relative() {
            if let Some(dir) = origin.parent() {
                cfg.data = dir.join(&cfg.data);
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let empty = [
            ("k", self.k.is_empty()),
            ("depth", self.depth.is_empty()),
            ("lag", self.lag.is_empty()),
            ("scale", self.scale.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(CliError::Usage(format!("sweep grid {name} is empty")));
        }
        if let Some(s) = self.scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(CliError::Usage(format!("scale factors must be positive, got {s}")));
        }
        Ok(())
    }

    fn spa1_config(&self) -> SpaIIConfig {
        SpaIIConfig { tol: self.tol, max_iter: self.max_iter, seed: self.seed, restarts: self.restarts }
    }

    fn fit_config(&self) -> SpaIIConfig {
        SpaIIConfig { max_iter: self.fit_max_iter.unwrap_or(self.max_iter), ..self.spa1_config() }
    }
}

/// Result of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub depth: usize,
    pub lag: usize,
    pub scale: f64,
    /// Between the forecast and the data, both as coordinates in the scaled
    /// learning polytope.
    pub hausdorff_barycentric: f64,
    /// Between the lifted forecast and the data in original units.
    pub hausdorff_full: f64,
    pub mspa_residual: f64,
    pub spa2_residual: f64,
    pub lift_residual: f64,
}

pub const HEADER: [&str; 9] = [
    "k",
    "depth",
    "lag",
    "scale",
    "hausdorff_barycentric",
    "hausdorff_full",
    "mspa_residual",
    "spa2_residual",
    "lift_residual",
];

impl SweepRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.k.to_string(),
            self.depth.to_string(),
            self.lag.to_string(),
            format_value(self.scale),
            format_value(self.hausdorff_barycentric),
            format_value(self.hausdorff_full),
            format_value(self.mspa_residual),
            format_value(self.spa2_residual),
            format_value(self.lift_residual),
        ]
    }
}

/// Moves every vertex away from (or towards) the centroid by `factor`.
pub fn scale_polytope(sigma: &DMatrix<f64>, factor: f64) -> DMatrix<f64> {
    let centroid = sigma.column_mean();
    DMatrix::from_fn(sigma.nrows(), sigma.ncols(), |i, j| centroid[i] + factor * (sigma[(i, j)] - centroid[i]))
}

/// Runs every cell of the grid on the `D × T` trajectory `data`. Both
/// polytopes are fitted once per `K`; only the learning polytope is scaled.
/// Every forecast starts from the first states of the data. Rows come back in
/// grid order (`k`, then `depth`, `lag`, `scale`) whatever the thread count.
pub fn run_sweep(cfg: &SweepConfig, data: &DMatrix<f64>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let norm = Normalization::fit(data)?;
    let x = norm.forward(data)?;
    let lift = solve_spa1(&x, cfg.k_lift, &cfg.spa1_config())?;
    let learned = cfg.k.iter().map(|&k| solve_spa1(&x, k, &cfg.spa1_config())).collect::<mspa::Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (ki, &k) in cfg.k.iter().enumerate() {
        for &depth in &cfg.depth {
            for &lag in &cfg.lag {
                for &scale in &cfg.scale {
                    cells.push((ki, k, depth, lag, scale));
                }
            }
        }
    }
    let fit_cfg = cfg.fit_config();
    cells
        .par_iter()
        .map(|&(ki, k, depth, lag, scale)| {
            let learn = &learned[ki];
            let (sigma, gamma) = if scale == 1.0 {
                (learn.sigma.clone(), learn.gamma.clone())
            } else {
                let sigma = scale_polytope(&learn.sigma, scale);
                let gamma = project_series(&sigma, &x)?;
                (sigma, gamma)
            };
            let mem = MemoryConfig::new(depth, lag, cfg.forward)?;
            let ordering = IndexOrdering::new(k, depth)?;
            let training = train_from_polytopes(
                norm.clone(),
                &x,
                sigma.clone(),
                gamma.clone(),
                lift.sigma.clone(),
                lift.gamma.clone(),
                &ordering,
                &mem,
                &fit_cfg,
            )?;
            let need = mem.history_span() + 1;
            let warm = project_series(&sigma, &x.columns(0, need).clone_owned())?;
            let (pred_gamma, pred) = forecast(&training.model, &warm, cfg.horizon.unwrap_or(data.ncols()))?;
            Ok(SweepRow {
                k,
                depth,
                lag,
                scale,
                hausdorff_barycentric: hausdorff(&pred_gamma, &gamma)?,
                hausdorff_full: hausdorff(&pred, data)?,
                mspa_residual: training.report.mspa_residual,
                spa2_residual: training.report.spa2_residual,
                lift_residual: training.report.lift_residual,
            })
        })
        .collect()
}
