//! Kolmogorov-Smirnov comparisons of empirical rows or columns with pooled
//! model draws.

use super::moments::Axis;
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::multivariate::EnsembleModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Smallest sample the test accepts.
pub const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Survival function of the Kolmogorov distribution,
/// `P(K > x) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Jacobi-transformed series converges fast for small x
        let pi = std::f64::consts::PI;
        let y = -pi * pi / (8.0 * x * x);
        let s: f64 = (1..=8).map(|k| ((2 * k - 1) as f64).powi(2) * y).map(f64::exp).sum();
        (1.0 - (2.0 * pi).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k * k) as f64 * x * x).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn asymptotic_p(d: f64, n_eff: f64) -> f64 {
    let r = n_eff.sqrt();
    kolmogorov_sf((r + 0.12 + 0.11 / r) * d)
}

/// Two-sample test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64], significance: f64) -> Result<KsResult> {
    if a.len() < MIN_POINTS || b.len() < MIN_POINTS {
        return Err(Error::InsufficientSample(format!(
            "KS needs {MIN_POINTS} points per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let p = asymptotic_p(d, na * nb / (na + nb));
    Ok(KsResult { statistic: d, p_value: p, reject: p < significance })
}

/// One-sample test against a continuous CDF.
pub fn ks_one_sample(a: &[f64], cdf: &dyn Fn(f64) -> f64, significance: f64) -> Result<KsResult> {
    if a.len() < MIN_POINTS {
        return Err(Error::InsufficientSample(format!("KS needs {MIN_POINTS} points, got {}", a.len())));
    }
    let a = sorted(a);
    let n = a.len() as f64;
    let d = a
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let p = asymptotic_p(d, n);
    Ok(KsResult { statistic: d, p_value: p, reject: p < significance })
}

/// Per-target outcomes of [`ks_compare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsSummary {
    pub axis: Axis,
    pub significance: f64,
    /// `None` for targets with fewer than [`MIN_POINTS`] observations.
    pub results: Vec<Option<KsResult>>,
    pub insufficient: usize,
}

impl KsSummary {
    /// Fraction of tested targets that are not rejected.
    pub fn compatible_fraction(&self) -> f64 {
        let tested: Vec<_> = self.results.iter().flatten().collect();
        if tested.is_empty() {
            return f64::NAN;
        }
        tested.iter().filter(|r| !r.reject).count() as f64 / tested.len() as f64
    }
}

fn values(m: &DataMatrix, axis: Axis, k: usize) -> Vec<f64> {
    match axis {
        Axis::Row => m.observed_row(k),
        Axis::Column => m.observed_col(k),
        Axis::Global => (0..m.n_rows()).flat_map(|i| m.observed_row(i)).collect(),
    }
}

/// Compares each row (column, or the whole matrix) of `data` with the
/// matching values pooled over `n_rep` matrices drawn from `model`.
pub fn ks_compare(
    data: &DataMatrix,
    model: &EnsembleModel,
    axis: Axis,
    n_rep: usize,
    seed: u64,
    significance: f64,
) -> Result<KsSummary> {
    if data.shape() != (model.n_rows(), model.n_cols()) {
        return Err(Error::ShapeMismatch("data and model shapes differ".into()));
    }
    let marginals = model.marginals()?;
    let draws: Vec<DataMatrix> = (0..n_rep)
        .into_par_iter()
        .map(|r| model.draw_with(&marginals, seed, r as u64))
        .collect();
    let targets = match axis {
        Axis::Row => data.n_rows(),
        Axis::Column => data.n_cols(),
        Axis::Global => 1,
    };
    let results: Vec<Option<KsResult>> = (0..targets)
        .into_par_iter()
        .map(|k| {
            let emp = values(data, axis, k);
            let pooled: Vec<f64> = draws.iter().flat_map(|m| values(m, axis, k)).collect();
            ks_two_sample(&emp, &pooled, significance).ok()
        })
        .collect();
    let insufficient = results.iter().filter(|r| r.is_none()).count();
    Ok(KsSummary { axis, significance, results, insufficient })
}
