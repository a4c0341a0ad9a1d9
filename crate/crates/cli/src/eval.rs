//! Comparisons between true and predicted trajectories.

use std::ops::RangeInclusive;

use nalgebra::DMatrix;

use mspa::metrics::{autocorrelation, avg_k_step_error, hausdorff, row_ranges, true_space_error, Space};

use crate::table::format_value;
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Mean distance between aligned rows.
    Error,
    /// Mean `k`-step error for every `k` up to the forecast length.
    KStep,
    Hausdorff,
    /// Autocorrelation tables of both inputs and their relative difference.
    Autocorrelation,
    /// Relative error of each coordinate's range.
    Amplitude,
}

impl std::str::FromStr for Metric {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "error" => Metric::Error,
            "kstep" => Metric::KStep,
            "hausdorff" => Metric::Hausdorff,
            "autocorrelation" => Metric::Autocorrelation,
            "amplitude" => Metric::Amplitude,
            _ => return Err(CliError::Usage(format!("unknown metric {s:?}"))),
        })
    }
}

/// Predicted trajectories and the truth row each one starts at.
#[derive(Debug, Clone)]
pub struct Forecasts {
    pub series: Vec<DMatrix<f64>>,
    /// Row `j` of `series[i]` predicts truth row `starts[i] + j`.
    pub starts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub space: Space,
    /// Largest `k` for `kstep`; the longest forecast when `None`.
    pub max_k: Option<usize>,
    /// Lags for the autocorrelation tables; `0..=T/2` when `None`.
    pub lags: Option<RangeInclusive<usize>>,
    /// Smallest lag entering the autocorrelation error.
    pub min_error_lag: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { space: Space::True, max_k: None, lags: None, min_error_lag: 0 }
    }
}

/// One output line: `metric,coord,param,value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub metric: &'static str,
    pub coord: Option<usize>,
    pub param: String,
    pub value: f64,
}

impl Row {
    fn new(metric: &'static str, coord: Option<usize>, param: impl ToString, value: f64) -> Self {
        Self { metric, coord, param: param.to_string(), value }
    }

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.metric.to_string(),
            self.coord.map(|c| (c + 1).to_string()).unwrap_or_default(),
            self.param.clone(),
            format_value(self.value),
        ]
    }
}

pub const HEADER: [&str; 4] = ["metric", "coord", "param", "value"];

/// `|range(pred) − range(truth)| / range(truth)` for every coordinate.
pub fn amplitude_errors(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Result<Vec<f64>> {
    if truth.nrows() != pred.nrows() {
        return Err(mspa::Error::Dimension(format!("{} and {} coordinates", truth.nrows(), pred.nrows())).into());
    }
    if truth.ncols() == 0 || pred.ncols() == 0 {
        return Err(mspa::Error::InsufficientData("empty trajectory".into()).into());
    }
    let (t, p) = (row_ranges(truth), row_ranges(pred));
    Ok(t.iter().zip(p.iter()).map(|(t, p)| (p - t).abs() / t).collect())
}

/// `‖a_pred − a_truth‖₂ / ‖a_truth‖₂` over the given lags of one coordinate's
/// autocorrelation.
pub fn autocorrelation_error(
    truth: &[DMatrix<f64>],
    pred: &[DMatrix<f64>],
    coord: usize,
    lags: RangeInclusive<usize>,
) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for lag in lags {
        let (a, b) = (autocorrelation(truth, coord, lag)?, autocorrelation(pred, coord, lag)?);
        num += (b - a).powi(2);
        den += a * a;
    }
    Ok((num / den).sqrt())
}

fn concat(series: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let d = series[0].nrows();
    if series.iter().any(|s| s.nrows() != d) {
        return Err(mspa::Error::Dimension("inputs differ in dimension".into()).into());
    }
    let cols: Vec<_> = series.iter().flat_map(|s| s.column_iter()).collect();
    if cols.is_empty() {
        return Ok(DMatrix::zeros(d, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

fn single<'a>(series: &'a [DMatrix<f64>], what: &str, metric: &str) -> Result<&'a DMatrix<f64>> {
    match series {
        [one] => Ok(one),
        _ => Err(CliError::Usage(format!("{metric} needs a single {what} file"))),
    }
}

pub fn evaluate(truth: &[DMatrix<f64>], pred: &Forecasts, metrics: &[Metric], s: &EvalSettings) -> Result<Vec<Row>> {
    if truth.is_empty() || pred.series.is_empty() {
        return Err(CliError::Usage("nothing to compare".into()));
    }
    if pred.starts.len() != pred.series.len() {
        return Err(CliError::Usage("every forecast needs a start row".into()));
    }
    let mut rows = Vec::new();
    for &metric in metrics {
        match metric {
            Metric::Error => {
                let (t, p) = (single(truth, "truth", "error")?, single(&pred.series, "prediction", "error")?);
                if t.nrows() != p.nrows() || t.ncols() < p.ncols() {
                    return Err(mspa::Error::Dimension(format!("truth {:?}, prediction {:?}", t.shape(), p.shape())).into());
                }
                let mut sum = 0.0;
                for j in 0..p.ncols() {
                    sum += true_space_error(t.column(j).as_slice(), p.column(j).as_slice())?;
                }
                let mean = if p.ncols() == 0 { 0.0 } else { sum / p.ncols() as f64 };
                rows.push(Row::new("error", None, "", mean));
            }
            Metric::KStep => {
                let t = single(truth, "truth", "kstep")?;
                // Column s + 1 of the padded truth is row s of the file, which
                // matches the convention of `avg_k_step_error`.
                let mut padded = DMatrix::zeros(t.nrows(), t.ncols() + 1);
                padded.columns_mut(1, t.ncols()).copy_from(t);
                let last = pred.starts.iter().copied().max().unwrap_or(0);
                let mut forecasts = vec![DMatrix::zeros(t.nrows(), 0); last + 1];
                for (&s, f) in pred.starts.iter().zip(&pred.series) {
                    forecasts[s] = f.clone();
                }
                let longest = pred.series.iter().map(|f| f.ncols()).max().unwrap_or(0);
                for k in 1..=s.max_k.unwrap_or(longest) {
                    rows.push(Row::new("kstep", None, k, avg_k_step_error(&padded, &forecasts, k, s.space)?));
                }
            }
            Metric::Hausdorff => {
                rows.push(Row::new("hausdorff", None, "", hausdorff(&concat(truth)?, &concat(&pred.series)?)?));
            }
            Metric::Autocorrelation => {
                let shortest = truth.iter().chain(&pred.series).map(|m| m.ncols()).min().unwrap_or(0);
                let lags = s.lags.clone().unwrap_or(0..=shortest / 2);
                for coord in 0..truth[0].nrows() {
                    for lag in lags.clone() {
                        rows.push(Row::new("autocorrelation_truth", Some(coord), lag, autocorrelation(truth, coord, lag)?));
                        rows.push(Row::new("autocorrelation_pred", Some(coord), lag, autocorrelation(&pred.series, coord, lag)?));
                    }
                    let from = s.min_error_lag.max(*lags.start());
                    let err = autocorrelation_error(truth, &pred.series, coord, from..=*lags.end())?;
                    rows.push(Row::new("autocorrelation_error", Some(coord), format!("{from}-{}", lags.end()), err));
                }
            }
            Metric::Amplitude => {
                let errs = amplitude_errors(&concat(truth)?, &concat(&pred.series)?)?;
                for (coord, e) in errs.into_iter().enumerate() {
                    rows.push(Row::new("amplitude", Some(coord), "", e));
                }
            }
        }
    }
    Ok(rows)
}
