//! Flagging cells that fall outside their marginal intervals, with a
//! false-coverage-rate adjustment for the selection step.

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::multivariate::{CellMarginal, EnsembleModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCell {
    pub row: usize,
    pub col: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub coverage_level: f64,
    pub fcr_q: f64,
    /// Cells outside their first-stage intervals.
    pub selected: usize,
    /// Observed cells.
    pub observed: usize,
    /// Coverage of the second-stage intervals, `1 - selected * q / observed`.
    pub adjusted_level: f64,
    pub flags: Vec<FlaggedCell>,
}

impl AnomalyReport {
    /// Bound on the expected flag fraction, `q * R / m`.
    pub fn nominal_rate(&self) -> f64 {
        if self.observed == 0 {
            0.0
        } else {
            self.fcr_q * self.selected as f64 / self.observed as f64
        }
    }

    pub fn flag_rate(&self) -> f64 {
        if self.observed == 0 {
            0.0
        } else {
            self.flags.len() as f64 / self.observed as f64
        }
    }
}

/// Central interval of the observed value at the given coverage.
pub fn marginal_interval(m: &CellMarginal, coverage: f64) -> (f64, f64) {
    let tail = 0.5 * (1.0 - coverage);
    (m.quantile(tail), m.quantile(1.0 - tail))
}

/// Two-stage scan: select cells outside `coverage` intervals, then flag
/// those selected cells that also fall outside intervals at level
/// `1 - R q / m`.
pub fn anomaly_scan(data: &DataMatrix, model: &EnsembleModel, coverage: f64, fcr_q: f64) -> Result<AnomalyReport> {
    if !(coverage > 0.0 && coverage < 1.0) || !(fcr_q > 0.0 && fcr_q < 1.0) {
        return Err(Error::InvalidArgument("coverage and fcr_q must lie in (0, 1)".into()));
    }
    let (n, t) = data.shape();
    if (n, t) != (model.n_rows(), model.n_cols()) {
        return Err(Error::ShapeMismatch("data and model shapes differ".into()));
    }
    let marg = model.marginals()?;
    let outside = |v: f64, (lo, hi): (f64, f64)| v < lo || v > hi;
    let mut selected = Vec::new();
    let mut observed = 0;
    for i in 0..n {
        for c in 0..t {
            let Some(v) = data.get(i, c) else { continue };
            observed += 1;
            if outside(v, marginal_interval(&marg[i * t + c], coverage)) {
                selected.push((i, c, v));
            }
        }
    }
    let adjusted_level = if observed == 0 { 1.0 } else { 1.0 - selected.len() as f64 * fcr_q / observed as f64 };
    let flags = selected
        .iter()
        .filter_map(|&(i, c, v)| {
            let (lower, upper) = marginal_interval(&marg[i * t + c], adjusted_level);
            outside(v, (lower, upper)).then_some(FlaggedCell { row: i, col: c, value: v, lower, upper })
        })
        .collect();
    Ok(AnomalyReport { coverage_level: coverage, fcr_q, selected: selected.len(), observed, adjusted_level, flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multivariate::{MultiplierSet, Variant};

    fn model() -> EnsembleModel {
        EnsembleModel::unconstrained(MultiplierSet::uniform(5, 40, Variant::NoMissing, 2.0, 2.0)).unwrap()
    }

    #[test]
    fn interval_has_requested_coverage() {
        let m = CellMarginal { p_plus: 0.3, p_minus: 0.7, p_missing: 0.0, lambda_plus: 2.0, lambda_minus: 0.5 };
        let (lo, hi) = marginal_interval(&m, 0.9);
        assert!((m.cdf(lo) - 0.05).abs() < 1e-12);
        assert!((m.cdf(hi) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn spike_is_flagged_and_flags_are_outside() {
        let model = model();
        let mut data = model.sample_matrix(3, 0).unwrap();
        // cell sd is 1 for unit rates; 10 sd is far in the tail
        data.set(2, 7, 10.0 * model.marginal(2, 7).unwrap().variance().sqrt() + 1.0);
        let r = anomaly_scan(&data, &model, 0.95, 0.05).unwrap();
        assert!(r.flags.iter().any(|f| f.row == 2 && f.col == 7));
        assert!(r.flags.len() <= r.selected);
        for f in &r.flags {
            assert!(f.value < f.lower || f.value > f.upper);
        }
    }

    #[test]
    fn all_missing_gives_empty_report() {
        let data = DataMatrix::from_rows(vec![vec![f64::NAN; 40]; 5]).unwrap();
        let r = anomaly_scan(&data, &model(), 0.95, 0.05).unwrap();
        assert!(r.flags.is_empty());
        assert_eq!(r.observed, 0);
    }
}
