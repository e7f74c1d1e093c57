//! Value-at-Risk from a single-series model (M1) and from circulant matrix
//! embeddings of the return window (M2, M3).

use crate::calibration::{calibrate_multivariate, calibrate_series, CalibrationOptions};
use crate::data::{compute_margins, empirical_quantiles, DataMatrix};
use crate::error::{Error, Result};
use crate::multivariate::{CellMarginal, ConstraintSpec};
use crate::univariate::{Family, UnivariateModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarModel {
    /// Single-series model: sums in the lower three quartile bins plus the
    /// global sum of squares.
    M1,
    /// Circulant matrix ensemble with row and column sums.
    M2,
    /// As M2, plus column counts of positive returns.
    M3,
}

impl VarModel {
    pub fn constraint_spec(self) -> Option<ConstraintSpec> {
        match self {
            VarModel::M1 => None,
            VarModel::M2 => Some(ConstraintSpec::sums_only()),
            VarModel::M3 => Some(ConstraintSpec::sums_and_column_counts()),
        }
    }
}

impl std::str::FromStr for VarModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(VarModel::M1),
            "M2" => Ok(VarModel::M2),
            "M3" => Ok(VarModel::M3),
            _ => Err(Error::InvalidArgument(format!("unknown VaR model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModelSpec {
    pub kind: VarModel,
    pub window: usize,
    pub l1: usize,
    pub l2: usize,
    /// Confidence level, e.g. 0.95 for the 5% return quantile.
    pub level: f64,
}

impl VarModelSpec {
    pub fn new(kind: VarModel, level: f64) -> Self {
        Self { kind, window: 150, l1: 25, l2: 126, level }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("VaR level {} outside (0, 1)", self.level)));
        }
        if self.kind != VarModel::M1 && (self.l1 < 2 || self.l2 < 1 || self.l1 + self.l2 - 1 != self.window) {
            return Err(Error::InvalidArgument(format!(
                "circulant shape {}x{} does not hold a window of {}",
                self.l1, self.l2, self.window
            )));
        }
        Ok(())
    }

    /// Nominal number of constraints: 4 for M1, `k (L1 + L2)` for the
    /// circulant models with `k = 2` (M2) or `3` (M3).
    pub fn nominal_constraints(&self) -> usize {
        match self.kind {
            VarModel::M1 => 4,
            VarModel::M2 => 2 * (self.l1 + self.l2),
            VarModel::M3 => 3 * (self.l1 + self.l2),
        }
    }
}

/// `L1 x (L2 + 1)` matrix with `R[k][j] = r_{L1 - k + j}` (1-based) and
/// `eps` in the one slot past the end of the window (top right).
pub fn circulant_embed(r: &[f64], l1: usize, l2: usize, eps: f64) -> Result<DataMatrix> {
    if l1 == 0 || r.len() != l1 + l2 - 1 {
        return Err(Error::ShapeMismatch(format!(
            "window of {} returns does not fit {l1}x{l2}",
            r.len()
        )));
    }
    let rows = (0..l1)
        .map(|k| (0..=l2).map(|j| r.get(l1 - k + j - 1).copied().unwrap_or(eps)).collect())
        .collect();
    DataMatrix::from_rows(rows)
}

/// Predictive distribution of the next return, from which several levels
/// can be read after one calibration.
#[derive(Debug, Clone)]
pub enum VarForecast {
    Univariate(Box<UnivariateModel>),
    /// Equal-weight mixture of the out-of-sample cell of both embeddings.
    Pooled([CellMarginal; 2]),
}

impl VarForecast {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            VarForecast::Univariate(m) => m.cdf(x),
            VarForecast::Pooled(ms) => ms.iter().map(|m| conditional_cdf(m, x)).sum::<f64>() / 2.0,
        }
    }

    /// Return quantile at probability `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            VarForecast::Univariate(m) => m.quantile(p),
            VarForecast::Pooled(ms) => {
                let mut lo = ms[0].quantile(p).min(ms[1].quantile(p));
                let mut hi = ms[0].quantile(p).max(ms[1].quantile(p));
                if lo == hi {
                    return lo;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi.abs().max(lo.abs()) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// VaR at confidence `level`: the `1 - level` return quantile.
    pub fn var(&self, level: f64) -> f64 {
        self.quantile(1.0 - level)
    }
}

fn conditional_cdf(m: &CellMarginal, x: f64) -> f64 {
    let obs = m.p_plus + m.p_minus;
    if obs > 0.0 {
        m.cdf(x) / obs
    } else if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Calibrates the chosen model on one window.
pub fn var_forecast(r: &[f64], spec: &VarModelSpec, opts: &CalibrationOptions) -> Result<VarForecast> {
    spec.validate()?;
    if r.len() != spec.window {
        return Err(Error::ShapeMismatch(format!("window of {} returns, expected {}", r.len(), spec.window)));
    }
    if r.iter().all(|&v| v == r[0]) {
        return Err(Error::DegenerateWindow(format!("all {} returns equal {}", r.len(), r[0])));
    }
    match spec.kind.constraint_spec() {
        None => {
            let grid = empirical_quantiles(r, &[0.0, 0.25, 0.5, 0.75, 1.0], true)?;
            if grid.is_degenerate() {
                return Err(Error::DegenerateWindow("coinciding quartiles".into()));
            }
            let (model, res) = calibrate_series(r, &grid, Family::BinSumsSquares, opts)?;
            if !res.converged {
                log::warn!("M1 window unconverged ({:.2e})", res.max_rel_constraint_err);
            }
            Ok(VarForecast::Univariate(Box::new(model)))
        }
        Some(cs) => {
            let eps = r.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
            let cells = [eps, -eps]
                .par_iter()
                .map(|&e| {
                    let m = circulant_embed(r, spec.l1, spec.l2, e)?;
                    let (model, res) = calibrate_multivariate(&cs, &compute_margins(&m), opts)?;
                    if !res.converged {
                        log::warn!("{:?} window unconverged ({:.2e})", spec.kind, res.max_rel_constraint_err);
                    }
                    model.marginal(0, spec.l2)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VarForecast::Pooled([cells[0], cells[1]]))
        }
    }
}

/// VaR of the next return at `spec.level`, as a (typically negative)
/// return quantile.
pub fn var_estimate(r: &[f64], spec: &VarModelSpec, opts: &CalibrationOptions) -> Result<f64> {
    Ok(var_forecast(r, spec, opts)?.var(spec.level))
}

/// One forecast per day `t >= window`, computed from the preceding
/// `window` returns; `levels` are read from the same calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingVar {
    pub levels: Vec<f64>,
    /// Index of the forecast day in the input series.
    pub days: Vec<usize>,
    /// `var[l][k]` is the VaR at `levels[l]` for `days[k]`.
    pub var: Vec<Vec<f64>>,
    pub exceptions: Vec<Vec<bool>>,
}

pub fn rolling_var(returns: &[f64], spec: &VarModelSpec, levels: &[f64], opts: &CalibrationOptions) -> Result<RollingVar> {
    spec.validate()?;
    let w = spec.window;
    if returns.len() <= w {
        return Err(Error::InsufficientSample(format!("{} returns for a window of {w}", returns.len())));
    }
    let days: Vec<usize> = (w..returns.len()).collect();
    let forecasts: Vec<VarForecast> =
        days.par_iter().map(|&d| var_forecast(&returns[d - w..d], spec, opts)).collect::<Result<_>>()?;
    let var: Vec<Vec<f64>> = levels.iter().map(|&l| forecasts.iter().map(|f| f.var(l)).collect()).collect();
    let exceptions = var.iter().map(|v| days.iter().zip(v).map(|(&d, &q)| returns[d] < q).collect()).collect();
    Ok(RollingVar { levels: levels.to_vec(), days, var, exceptions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gaussian_stream;

    #[test]
    fn toy_embedding() {
        let m = circulant_embed(&[1.0, 2.0, 3.0, 4.0], 2, 3, 9.0).unwrap();
        assert_eq!(m.row(0), &[2.0, 3.0, 4.0, 9.0]);
        assert_eq!(m.row(1), &[1.0, 2.0, 3.0, 4.0]);
        assert!(circulant_embed(&[1.0, 2.0], 2, 3, 0.0).is_err());
    }

    #[test]
    fn full_size_embedding_layout() {
        let r: Vec<f64> = (1..=150).map(f64::from).collect();
        let m = circulant_embed(&r, 25, 126, -7.0).unwrap();
        assert_eq!(m.shape(), (25, 127));
        assert_eq!(m.get(24, 0), Some(1.0));
        assert_eq!(m.get(0, 0), Some(25.0));
        assert_eq!(m.get(0, 126), Some(-7.0));
        // constant along diagonals
        for k in 1..25 {
            for j in 1..127 {
                assert_eq!(m.get(k, j), m.get(k - 1, j - 1));
            }
        }
        // every return appears, each at most min(L1, L2 + 1) times
        for v in 1..=150 {
            let n = (0..25).flat_map(|k| (0..127).map(move |j| (k, j))).filter(|&(k, j)| m.get(k, j) == Some(v as f64)).count();
            assert!(n >= 1 && n <= 25, "{v} {n}");
        }
    }

    #[test]
    fn nominal_counts() {
        assert_eq!(VarModelSpec::new(VarModel::M1, 0.95).nominal_constraints(), 4);
        assert_eq!(VarModelSpec::new(VarModel::M2, 0.95).nominal_constraints(), 302);
        assert_eq!(VarModelSpec::new(VarModel::M3, 0.95).nominal_constraints(), 453);
        assert!(VarModelSpec { l2: 100, ..VarModelSpec::new(VarModel::M2, 0.95) }.validate().is_err());
    }

    #[test]
    fn constant_window_is_degenerate() {
        let r = vec![0.01; 150];
        for kind in [VarModel::M1, VarModel::M2] {
            let e = var_estimate(&r, &VarModelSpec::new(kind, 0.95), &CalibrationOptions::default());
            assert!(matches!(e, Err(Error::DegenerateWindow(_))));
        }
    }

    #[test]
    fn gaussian_m1_var_tracks_normal_quantile() {
        let spec = VarModelSpec::new(VarModel::M1, 0.95);
        let mut ratios: Vec<f64> = (0..100)
            .into_par_iter()
            .map(|s| var_estimate(&gaussian_stream(150, 0.01, s).unwrap(), &spec, &CalibrationOptions::default()).unwrap() / (-1.644854 * 0.01))
            .collect();
        ratios.sort_by(f64::total_cmp);
        let median = 0.5 * (ratios[49] + ratios[50]);
        assert!((median - 1.0).abs() < 0.15, "{median}");
    }

    #[test]
    fn alternating_window_sits_on_its_magnitude() {
        let r: Vec<f64> = (0..150).map(|k| if k % 2 == 0 { 0.02 } else { -0.02 }).collect();
        let spec = VarModelSpec::new(VarModel::M1, 0.95);
        let opts = CalibrationOptions::default();
        // the lowest bin holds no data, so the mass piles up at the lower
        // quartile -0.02
        let a = var_estimate(&r, &spec, &opts).unwrap();
        assert!((a + 0.02).abs() < 1e-3, "{a}");
        assert_eq!(a, var_estimate(&r, &spec, &opts).unwrap());
    }

    #[test]
    fn levels_are_monotone() {
        let r = gaussian_stream(150, 0.01, 5).unwrap();
        for kind in [VarModel::M1, VarModel::M2, VarModel::M3] {
            let f = var_forecast(&r, &VarModelSpec::new(kind, 0.95), &CalibrationOptions::default()).unwrap();
            let (a, b, c) = (f.var(0.99), f.var(0.95), f.var(0.90));
            assert!(a <= b && b <= c, "{kind:?} {a} {b} {c}");
            assert!(b < 0.0);
        }
    }
}
