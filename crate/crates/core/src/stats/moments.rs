//! Moment statistics of rows, columns or the whole matrix, and their
//! distribution over sampled matrices.

use crate::data::{quantile_sorted, DataMatrix};
use crate::error::{Error, Result};
use crate::multivariate::EnsembleModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Moment {
    Mean,
    Variance,
    Skewness,
    Kurtosis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Column,
    Global,
}

/// Sample moment of `values`; `None` when undefined (too few points or no
/// spread for the standardized moments).
///
/// Variance uses the `n - 1` denominator; skewness and kurtosis are the
/// plain moment ratios `m3 / m2^1.5` and `m4 / m2^2`.
pub fn sample_moment(values: &[f64], moment: Moment) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    if moment == Moment::Mean {
        return Some(mean);
    }
    if n < 2 {
        return None;
    }
    let central = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
    let m2 = central(2);
    match moment {
        Moment::Variance => Some(m2 * nf / (nf - 1.0)),
        Moment::Skewness if m2 > 0.0 && n >= 3 => Some(central(3) / m2.powf(1.5)),
        Moment::Kurtosis if m2 > 0.0 && n >= 4 => Some(central(4) / (m2 * m2)),
        _ => None,
    }
}

fn groups(data: &DataMatrix, axis: Axis) -> Vec<Vec<f64>> {
    match axis {
        Axis::Row => (0..data.n_rows()).map(|i| data.observed_row(i)).collect(),
        Axis::Column => (0..data.n_cols()).map(|t| data.observed_col(t)).collect(),
        Axis::Global => vec![(0..data.n_rows()).flat_map(|i| data.observed_row(i)).collect()],
    }
}

/// The chosen moment for every row, column, or the whole matrix.
pub fn empirical_moments(data: &DataMatrix, moment: Moment, axis: Axis) -> Vec<Option<f64>> {
    groups(data, axis).iter().map(|g| sample_moment(g, moment)).collect()
}

/// Monte Carlo distribution of a moment, one sample per replicate and
/// target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDistribution {
    pub moment: Moment,
    pub axis: Axis,
    /// `samples[target]`, sorted ascending.
    pub samples: Vec<Vec<f64>>,
    /// Replicates in which the moment was undefined, per target.
    pub excluded: Vec<usize>,
    pub n_rep: usize,
    /// Exact expectation of the statistic where a closed form exists
    /// (sample mean and sample variance of complete rows or columns).
    pub analytic: Option<Vec<f64>>,
}

impl EnsembleDistribution {
    pub fn n_targets(&self) -> usize {
        self.samples.len()
    }

    pub fn quantile(&self, target: usize, p: f64) -> f64 {
        let s = &self.samples[target];
        if s.is_empty() {
            return f64::NAN;
        }
        quantile_sorted(s, p)
    }

    pub fn mean(&self, target: usize) -> f64 {
        let s = &self.samples[target];
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// Standard error of [`EnsembleDistribution::mean`].
    pub fn std_err(&self, target: usize) -> f64 {
        let s = &self.samples[target];
        let n = s.len() as f64;
        let m = self.mean(target);
        (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    }

    /// Whether `value` lies in the `[lo, hi]` quantile band of `target`.
    pub fn contains(&self, target: usize, value: f64, lo: f64, hi: f64) -> bool {
        value >= self.quantile(target, lo) && value <= self.quantile(target, hi)
    }

    /// Fraction of defined empirical values inside their band.
    pub fn compatible_fraction(&self, empirical: &[Option<f64>], lo: f64, hi: f64) -> f64 {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (k, v) in empirical.iter().enumerate() {
            if let Some(v) = v {
                if self.samples[k].is_empty() {
                    continue;
                }
                total += 1;
                if self.contains(k, *v, lo, hi) {
                    hits += 1;
                }
            }
        }
        if total == 0 {
            f64::NAN
        } else {
            hits as f64 / total as f64
        }
    }
}

/// Exact expectation of the sample mean or sample variance of each target
/// when no cell can be missing.
///
/// For independent cells with means `m_c` and variances `v_c`,
/// `E[s^2] = mean(v) + sum (m_c - mean(m))^2 / (n - 1)`.
fn analytic_moments(model: &EnsembleModel, moment: Moment, axis: Axis) -> Result<Option<Vec<f64>>> {
    if !matches!(moment, Moment::Mean | Moment::Variance) {
        return Ok(None);
    }
    let marg = model.marginals()?;
    if marg.iter().any(|m| m.p_missing > 0.0) {
        return Ok(None);
    }
    let (n, t) = (model.n_rows(), model.n_cols());
    let members: Vec<Vec<usize>> = match axis {
        Axis::Row => (0..n).map(|i| (0..t).map(|c| i * t + c).collect()).collect(),
        Axis::Column => (0..t).map(|c| (0..n).map(|i| i * t + c).collect()).collect(),
        Axis::Global => vec![(0..n * t).collect()],
    };
    let out = members
        .iter()
        .map(|idx| {
            let k = idx.len() as f64;
            let means: Vec<f64> = idx.iter().map(|&j| marg[j].mean()).collect();
            let mbar = means.iter().sum::<f64>() / k;
            match moment {
                Moment::Mean => mbar,
                _ => {
                    let vbar = idx.iter().map(|&j| marg[j].variance()).sum::<f64>() / k;
                    vbar + means.iter().map(|m| (m - mbar).powi(2)).sum::<f64>() / (k - 1.0)
                }
            }
        })
        .collect();
    Ok(Some(out))
}

/// Distribution of a moment over `n_rep` sampled matrices.
pub fn moment_distribution(
    model: &EnsembleModel,
    moment: Moment,
    axis: Axis,
    n_rep: usize,
    seed: u64,
) -> Result<EnsembleDistribution> {
    if n_rep == 0 {
        return Err(Error::InvalidArgument("n_rep must be positive".into()));
    }
    if n_rep < 100 {
        log::warn!("moment_distribution: {n_rep} replicates give coarse bands");
    }
    let marginals = model.marginals()?;
    let per_rep: Vec<Vec<Option<f64>>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let m = model.draw_with(&marginals, seed, r as u64);
            empirical_moments(&m, moment, axis)
        })
        .collect();
    let targets = per_rep[0].len();
    let mut samples = vec![Vec::with_capacity(n_rep); targets];
    let mut excluded = vec![0; targets];
    for rep in &per_rep {
        for (k, v) in rep.iter().enumerate() {
            match v {
                Some(v) => samples[k].push(*v),
                None => excluded[k] += 1,
            }
        }
    }
    for s in &mut samples {
        s.sort_by(f64::total_cmp);
    }
    if excluded.iter().any(|&e| e > 0) {
        log::warn!("moment_distribution: {} undefined replicate values excluded", excluded.iter().sum::<usize>());
    }
    Ok(EnsembleDistribution {
        moment,
        axis,
        samples,
        excluded,
        n_rep,
        analytic: analytic_moments(model, moment, axis)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multivariate::{MultiplierSet, Variant};

    #[test]
    fn sample_moment_small_cases() {
        assert_eq!(sample_moment(&[], Moment::Mean), None);
        assert_eq!(sample_moment(&[2.0], Moment::Variance), None);
        assert_eq!(sample_moment(&[1.0, 3.0], Moment::Variance), Some(2.0));
        assert_eq!(sample_moment(&[1.0, 1.0, 1.0], Moment::Skewness), None);
        let s = sample_moment(&[-1.0, 0.0, 1.0], Moment::Skewness).unwrap();
        assert!(s.abs() < 1e-15);
        // two-point symmetric law has kurtosis 1
        let k = sample_moment(&[-1.0, 1.0, -1.0, 1.0], Moment::Kurtosis).unwrap();
        assert!((k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_model_has_zero_mean_skewness() {
        let model = EnsembleModel::unconstrained(MultiplierSet::uniform(4, 30, Variant::NoMissing, 2.0, 2.0)).unwrap();
        let d = moment_distribution(&model, Moment::Skewness, Axis::Row, 400, 1).unwrap();
        for k in 0..4 {
            assert!(d.mean(k).abs() < 4.0 * d.std_err(k), "{} {}", d.mean(k), d.std_err(k));
        }
    }

    #[test]
    fn analytic_variance_matches_monte_carlo() {
        let mut ms = MultiplierSet::uniform(3, 12, Variant::NoMissing, 2.0, 3.0);
        for (c, v) in ms.alpha_col.iter_mut().enumerate() {
            *v = 0.2 * c as f64 - 1.0;
        }
        for (c, v) in ms.gamma_col.iter_mut().enumerate() {
            *v += 0.1 * c as f64;
        }
        let model = EnsembleModel::unconstrained(ms).unwrap();
        let marg = model.marginals().unwrap();
        // oracle: moment algebra of the hyperexponential cell, done here
        // from the sign probabilities and rates directly
        let cell = |j: usize| {
            let m = &marg[j];
            let mean = m.p_plus / m.lambda_plus - m.p_minus / m.lambda_minus;
            let second = 2.0 * m.p_plus / m.lambda_plus.powi(2) + 2.0 * m.p_minus / m.lambda_minus.powi(2);
            (mean, second - mean * mean)
        };
        let d = moment_distribution(&model, Moment::Variance, Axis::Row, 4000, 5).unwrap();
        for i in 0..3 {
            let cells: Vec<(f64, f64)> = (0..12).map(|c| cell(i * 12 + c)).collect();
            let mbar = cells.iter().map(|c| c.0).sum::<f64>() / 12.0;
            let expect = cells.iter().map(|c| c.1).sum::<f64>() / 12.0
                + cells.iter().map(|c| (c.0 - mbar).powi(2)).sum::<f64>() / 11.0;
            assert!((d.analytic.as_ref().unwrap()[i] - expect).abs() < 1e-12);
            assert!((d.mean(i) - expect).abs() < 4.0 * d.std_err(i), "{} vs {expect}", d.mean(i));
        }
    }

    #[test]
    fn replicates_are_reproducible() {
        let model = EnsembleModel::unconstrained(MultiplierSet::uniform(3, 8, Variant::WithMissing, 2.0, 2.0)).unwrap();
        let a = moment_distribution(&model, Moment::Kurtosis, Axis::Column, 50, 9).unwrap();
        let b = moment_distribution(&model, Moment::Kurtosis, Axis::Column, 50, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.analytic.is_none());
    }
}
