//! Correlation-matrix spectra, the Marchenko-Pastur law and kernel density
//! estimates of eigenvalue samples.

use crate::data::{quantile_sorted, DataMatrix};
use crate::error::{Error, Result};
use crate::multivariate::EnsembleModel;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Rows sharing fewer observed columns than this with some other row are
/// left out of the correlation matrix.
pub const MIN_OVERLAP: usize = 10;

/// Pearson correlation over pairwise-complete observations.
///
/// Returns the matrix over the kept rows and their indices.
pub fn correlation_matrix(data: &DataMatrix) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let (n, t) = data.shape();
    for i in 0..n {
        let obs = data.observed_row(i);
        let first = obs.first().copied();
        if obs.len() < 2 || obs.iter().all(|&v| Some(v) == first) {
            return Err(Error::DegenerateRow(i));
        }
    }
    let overlap = |a: usize, b: usize| (0..t).filter(|&c| data.is_observed(a, c) && data.is_observed(b, c)).count();
    let kept: Vec<usize> = if data.has_missing() {
        let k: Vec<usize> = (0..n).filter(|&i| (0..n).all(|j| j == i || overlap(i, j) >= MIN_OVERLAP)).collect();
        if k.len() < n {
            log::warn!("correlation_matrix: {} rows with too little overlap left out", n - k.len());
        }
        k
    } else {
        (0..n).collect()
    };
    let m = kept.len();
    let mut c = DMatrix::identity(m, m);
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ra, rb) = (kept[a], kept[b]);
            let (x, y): (Vec<f64>, Vec<f64>) = (0..t)
                .filter_map(|col| Some((data.get(ra, col)?, data.get(rb, col)?)))
                .unzip();
            pearson(&x, &y)
        })
        .collect();
    for (&(a, b), v) in pairs.iter().zip(values) {
        c[(a, b)] = v;
        c[(b, a)] = v;
    }
    Ok((c, kept))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Eigenvalues of the correlation matrix, largest first.
pub fn correlation_spectrum(data: &DataMatrix) -> Result<Vec<f64>> {
    let (c, _) = correlation_matrix(data)?;
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Support `[(1 - sqrt q)^2, (1 + sqrt q)^2]`.
pub fn mp_edges(q: f64) -> (f64, f64) {
    let r = q.sqrt();
    ((1.0 - r).powi(2), (1.0 + r).powi(2))
}

/// Marchenko-Pastur density for ratio `q = N / T < 1`.
pub fn mp_density(lambda: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("Marchenko-Pastur ratio must lie in (0, 1), got {q}")));
    }
    let (lo, hi) = mp_edges(q);
    if lambda <= lo || lambda >= hi {
        return Ok(0.0);
    }
    Ok(((hi - lambda) * (lambda - lo)).sqrt() / (2.0 * std::f64::consts::PI * q * lambda))
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(points: &[f64]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    let sd = (points.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = points.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3 * (1.0 + mean.abs())
    }
}

/// Gaussian kernel density of `points` on `grid`.
pub fn kde(points: &[f64], grid: &[f64], bandwidth: f64) -> Vec<f64> {
    let norm = 1.0 / (points.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.par_iter()
        .map(|&x| points.iter().map(|p| (-0.5 * ((x - p) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// Evenly spaced grid of `n` points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpectrum {
    pub grid: Vec<f64>,
    /// Kernel estimate of the pooled eigenvalue density.
    pub mean_density: Vec<f64>,
    pub bandwidth: f64,
    /// Largest eigenvalue of every successful replicate.
    pub lambda_max: Vec<f64>,
    /// Pooled eigenvalues, sorted ascending.
    pub eigenvalues: Vec<f64>,
    pub failures: usize,
}

/// Spectra of `n_rep` sampled matrices. `grid` defaults to 256 points
/// spanning the pooled eigenvalues.
pub fn ensemble_spectrum(model: &EnsembleModel, n_rep: usize, seed: u64, grid: Option<Vec<f64>>) -> Result<EnsembleSpectrum> {
    if n_rep == 0 {
        return Err(Error::InvalidArgument("n_rep must be positive".into()));
    }
    let marginals = model.marginals()?;
    let spectra: Vec<Option<Vec<f64>>> = (0..n_rep)
        .into_par_iter()
        .map(|r| correlation_spectrum(&model.draw_with(&marginals, seed, r as u64)).ok())
        .collect();
    let failures = spectra.iter().filter(|s| s.is_none()).count();
    if failures > 0 {
        log::warn!("ensemble_spectrum: {failures} replicates excluded");
    }
    let ok: Vec<Vec<f64>> = spectra.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::InsufficientSample("no replicate produced a spectrum".into()));
    }
    let lambda_max: Vec<f64> = ok.iter().map(|s| s[0]).collect();
    let mut eigenvalues: Vec<f64> = ok.into_iter().flatten().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let bandwidth = silverman_bandwidth(&eigenvalues);
    let grid = grid.unwrap_or_else(|| {
        let hi = eigenvalues[eigenvalues.len() - 1] + 3.0 * bandwidth;
        linear_grid(0.0, hi, 256)
    });
    let mean_density = kde(&eigenvalues, &grid, bandwidth);
    Ok(EnsembleSpectrum { grid, mean_density, bandwidth, lambda_max, eigenvalues, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, t: usize, seed: u64) -> DataMatrix {
        let mut rng = stream_rng(seed, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        DataMatrix::from_rows((0..n).map(|_| (0..t).map(|_| normal.sample(&mut rng)).collect()).collect()).unwrap()
    }

    #[test]
    fn trace_and_reality() {
        let ev = correlation_spectrum(&gaussian(20, 100, 1)).unwrap();
        assert!((ev.iter().sum::<f64>() - 20.0).abs() < 1e-8);
        assert!(ev.iter().all(|&l| l > -1e-10));
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn iid_spectrum_lies_near_marchenko_pastur_support() {
        let ev = correlation_spectrum(&gaussian(50, 500, 2)).unwrap();
        let (lo, hi) = mp_edges(0.1);
        assert!(ev[0] < hi + 0.1 && ev[49] > lo - 0.1, "{} {}", ev[0], ev[49]);
    }

    #[test]
    fn duplicated_row_is_rank_one() {
        let base = gaussian(1, 60, 3);
        let rows = vec![base.row(0).to_vec(); 8];
        let ev = correlation_spectrum(&DataMatrix::from_rows(rows).unwrap()).unwrap();
        assert!((ev[0] - 8.0).abs() < 1e-10);
        assert!(ev[1..].iter().all(|l| l.abs() < 1e-10));
    }

    #[test]
    fn constant_row_is_degenerate() {
        let d = DataMatrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![5.0; 3]]).unwrap();
        assert!(matches!(correlation_spectrum(&d), Err(Error::DegenerateRow(1))));
    }

    #[test]
    fn marchenko_pastur_normalization_and_edges() {
        let q = 0.2;
        let (lo, hi) = mp_edges(q);
        let total = adaptive_simpson(&|l: f64| mp_density(l, q).unwrap(), lo, hi, 1e-10);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        assert_eq!(mp_density(lo, q).unwrap(), 0.0);
        assert_eq!(mp_density(hi, q).unwrap(), 0.0);
        let q = 100.0 / 560.0;
        let (_, hi) = mp_edges(q);
        assert!((hi - (1.0 + q.sqrt()).powi(2)).abs() < 1e-15 && (hi - 2.02).abs() < 0.01);
        assert!(mp_density(1.0, 1.5).is_err());
    }

    #[test]
    fn kde_integrates_to_one() {
        let pts = [0.0, 0.5, 2.0, 2.1];
        let h = silverman_bandwidth(&pts);
        let grid = linear_grid(-5.0, 7.0, 4001);
        let d = kde(&pts, &grid, h);
        let step = grid[1] - grid[0];
        let total: f64 = d.iter().sum::<f64>() * step;
        assert!((total - 1.0).abs() < 1e-6);
    }
}
