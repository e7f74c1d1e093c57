//! Ensemble detrending and mean-variance portfolios on correlation
//! matrices, with rolling out-of-sample evaluation.

use crate::calibration::{calibrate_multivariate, CalibrationOptions};
use crate::data::{compute_margins, quantile_sorted, DataMatrix};
use crate::error::{Error, Result};
use crate::multivariate::{ConstraintSpec, EnsembleModel};
use crate::rng::stream_rng;
use crate::stats::correlation_matrix;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Subtracts each cell's ensemble mean `p+/l+ - p-/l-`. Missing cells stay
/// missing.
pub fn detrend(data: &DataMatrix, model: &EnsembleModel) -> Result<DataMatrix> {
    if data.shape() != (model.n_rows(), model.n_cols()) {
        return Err(Error::ShapeMismatch("data and model shapes differ".into()));
    }
    let means = model.mean_matrix()?;
    let t = data.n_cols();
    let mut out = data.clone();
    for i in 0..data.n_rows() {
        for c in 0..t {
            if let Some(v) = data.get(i, c) {
                out.set(i, c, v - means[i * t + c]);
            }
        }
    }
    Ok(out)
}

/// Centers rows, calibrates the ensemble and returns the detrended
/// centered data.
pub fn calibrate_and_detrend(data: &DataMatrix, opts: &CalibrationOptions) -> Result<DataMatrix> {
    let centered = data.center_rows()?;
    let spec = if centered.has_missing() { ConstraintSpec::full() } else { ConstraintSpec::no_missing() };
    let (model, result) = calibrate_multivariate(&spec, &compute_margins(&centered), opts)?;
    if !result.converged {
        log::warn!("detrending with an unconverged model ({:.2e})", result.max_rel_constraint_err);
    }
    detrend(&centered, &model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub weights: Vec<f64>,
    pub target_return: f64,
    pub expected_returns: Vec<f64>,
    /// `pi' C pi` with `C` the in-sample correlation matrix.
    pub in_sample_variance: f64,
    /// Columns `[start, end)` of the in-sample window.
    pub window: (usize, usize),
}

/// Mean-reversion forecast: minus the last observed return of each row.
pub fn mean_reversion_returns(window: &DataMatrix) -> Vec<f64> {
    (0..window.n_rows())
        .map(|i| -(0..window.n_cols()).rev().find_map(|c| window.get(i, c)).unwrap_or(0.0))
        .collect()
}

/// Weights minimizing `pi' C pi` subject to `sum pi = 1` and
/// `sum pi mu = target`:
/// `pi = C^-1 (l 1 + g mu)` with `l = (c - b target) / (ac - b^2)`,
/// `g = (a target - b) / (ac - b^2)`.
///
/// When all `mu` coincide the frontier collapses; a target equal to that
/// common value gets the minimum-variance portfolio `C^-1 1 / (1' C^-1 1)`.
pub fn frontier_weights(c: &DMatrix<f64>, mu: &[f64], target: f64) -> Result<Vec<f64>> {
    let n = c.nrows();
    if c.ncols() != n || mu.len() != n {
        return Err(Error::ShapeMismatch("correlation and return shapes differ".into()));
    }
    let chol = c.clone().cholesky().ok_or_else(|| Error::SingularCorrelation("correlation matrix is not positive definite".into()))?;
    let ones = DVector::from_element(n, 1.0);
    let m = DVector::from_column_slice(mu);
    let ci1 = chol.solve(&ones);
    let cim = chol.solve(&m);
    let a = ones.dot(&ci1);
    let b = ones.dot(&cim);
    let cc = m.dot(&cim);
    let det = a * cc - b * b;
    if det.abs() <= 1e-12 * (a * cc).abs().max(b * b) {
        let spread = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - mu.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread <= 1e-14 * mu[0].abs().max(1e-300) || spread == 0.0 {
            if (target - mu[0]).abs() <= 1e-12 * mu[0].abs().max(1.0) {
                return Ok(ci1.iter().map(|v| v / a).collect());
            }
        }
        return Err(Error::DegenerateFrontier(det));
    }
    let l = (cc - b * target) / det;
    let g = (a * target - b) / det;
    Ok((ci1 * l + cim * g).iter().copied().collect())
}

/// Markowitz weights from an in-sample window (rows = assets) with
/// mean-reversion expected returns. `target` defaults to the mean of the
/// expected returns.
pub fn markowitz_weights(window: &DataMatrix, target: Option<f64>) -> Result<PortfolioSolution> {
    let (n, t) = window.shape();
    if n >= t {
        return Err(Error::SingularCorrelation(format!("{n} assets need more than {t} observations")));
    }
    let (c, kept) = correlation_matrix(window)?;
    if kept.len() != n {
        return Err(Error::SingularCorrelation("some assets lack overlapping observations".into()));
    }
    let mu = mean_reversion_returns(window);
    let target = target.unwrap_or_else(|| mu.iter().sum::<f64>() / n as f64);
    let weights = frontier_weights(&c, &mu, target)?;
    let w = DVector::from_column_slice(&weights);
    let in_sample_variance = w.dot(&(&c * &w));
    Ok(PortfolioSolution { weights, target_return: target, expected_returns: mu, in_sample_variance, window: (0, t) })
}

/// Realized variance (`n - 1` denominator) and mean/std Sharpe ratio of a
/// portfolio over a block of returns.
pub fn realized_performance(returns: &DataMatrix, weights: &[f64]) -> (f64, Option<f64>) {
    let t = returns.n_cols();
    let series: Vec<f64> = (0..t)
        .map(|c| weights.iter().enumerate().map(|(i, w)| w * returns.get(i, c).unwrap_or(0.0)).sum())
        .collect();
    let mean = series.iter().sum::<f64>() / t as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t as f64 - 1.0).max(1.0);
    let sharpe = (var > 0.0).then(|| mean / var.sqrt());
    (var, sharpe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosConfig {
    pub sizes: Vec<usize>,
    pub qs: Vec<f64>,
    pub horizon: usize,
    /// Random asset subsets drawn per size.
    pub portfolios: usize,
    pub detrend: bool,
    pub seed: u64,
}

impl Default for OosConfig {
    fn default() -> Self {
        Self { sizes: vec![20, 50], qs: vec![2.0 / 3.0, 0.25], horizon: 30, portfolios: 2, detrend: true, seed: 0 }
    }
}

/// Outcome of one in-sample / out-of-sample window pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub start: usize,
    pub variance: f64,
    pub sharpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub p05: f64,
    pub p95: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Option<Band> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Band {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p05: quantile_sorted(&s, 0.05),
            p95: quantile_sorted(&s, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosRow {
    pub size: usize,
    pub q: f64,
    pub portfolio: usize,
    pub assets: Vec<usize>,
    pub windows: Vec<WindowOutcome>,
    pub risk: Option<Band>,
    /// `None` when no window has a defined ratio.
    pub sharpe: Option<Band>,
}

/// Weights from columns `[start, start + t_in)` of the chosen assets,
/// evaluated on the following `horizon` raw columns.
///
/// Detrending calibrates the ensemble on every row of `returns` over the
/// in-sample columns. Column sums are constrained, so detrended rows of the
/// full panel add up to zero each day; a portfolio of every asset therefore
/// has a singular detrended correlation matrix.
pub fn evaluate_window(
    returns: &DataMatrix,
    assets: &[usize],
    start: usize,
    t_in: usize,
    horizon: usize,
    detrended: bool,
    opts: &CalibrationOptions,
) -> Result<WindowOutcome> {
    let out = returns.select(assets, start + t_in..start + t_in + horizon)?;
    let ins = if detrended {
        let all: Vec<usize> = (0..returns.n_rows()).collect();
        let panel = calibrate_and_detrend(&returns.select(&all, start..start + t_in)?, opts)?;
        panel.select(assets, 0..t_in)?
    } else {
        returns.select(assets, start..start + t_in)?
    };
    let sol = markowitz_weights(&ins, None)?;
    let (variance, sharpe) = realized_performance(&out, &sol.weights);
    Ok(WindowOutcome { start, variance, sharpe })
}

/// Rolling evaluation: out-of-sample blocks of `horizon` columns never
/// overlap, each preceded by an in-sample window of `round(N / q)` columns.
pub fn out_of_sample_eval(returns: &DataMatrix, cfg: &OosConfig, opts: &CalibrationOptions) -> Result<Vec<OosRow>> {
    let (n_all, t_all) = returns.shape();
    let mut rows = Vec::new();
    for (si, &size) in cfg.sizes.iter().enumerate() {
        if size > n_all {
            return Err(Error::InvalidArgument(format!("portfolio of {size} from {n_all} assets")));
        }
        for p in 0..cfg.portfolios {
            let mut idx: Vec<usize> = (0..n_all).collect();
            idx.shuffle(&mut stream_rng(cfg.seed, (si * 1000 + p) as u64));
            let mut assets = idx[..size].to_vec();
            assets.sort_unstable();
            for &q in &cfg.qs {
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::InvalidArgument(format!("q = {q} outside (0, 1)")));
                }
                let t_in = (size as f64 / q).round() as usize;
                let starts: Vec<usize> = (0..).map(|k| k * cfg.horizon).take_while(|s| s + t_in + cfg.horizon <= t_all).collect();
                if starts.len() < 2 {
                    return Err(Error::InsufficientSample(format!(
                        "{t_all} columns give fewer than two windows for N = {size}, q = {q:.3}"
                    )));
                }
                let windows: Vec<WindowOutcome> = starts
                    .par_iter()
                    .map(|&s| evaluate_window(returns, &assets, s, t_in, cfg.horizon, cfg.detrend, opts))
                    .collect::<Result<_>>()?;
                let risk = Band::of(&windows.iter().map(|w| w.variance).collect::<Vec<_>>());
                let sharpe = Band::of(&windows.iter().filter_map(|w| w.sharpe).collect::<Vec<_>>());
                rows.push(OosRow { size, q, portfolio: p, assets: assets.clone(), windows, risk, sharpe });
            }
        }
    }
    Ok(rows)
}
