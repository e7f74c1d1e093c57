//! Periodograms of single rows and their ensemble averages.

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::multivariate::EnsembleModel;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    /// Frequencies `k / T` in cycles per sample, `k = 0..T`.
    pub freqs: Vec<f64>,
    /// `|DFT_k|^2 / T` of the demeaned series.
    pub power: Vec<f64>,
}

impl Periodogram {
    /// Frequency of the largest peak among `0 < k <= T / 2`.
    pub fn dominant_frequency(&self) -> f64 {
        let half = self.power.len() / 2;
        (1..=half)
            .max_by(|&a, &b| self.power[a].total_cmp(&self.power[b]))
            .map_or(0.0, |k| self.freqs[k])
    }
}

/// Periodogram of a complete series. The mean is removed first, so the
/// powers sum to `T` times the (biased) variance.
pub fn periodogram(series: &[f64]) -> Result<Periodogram> {
    let t = series.len();
    if t == 0 {
        return Err(Error::EmptyInput);
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);
    Ok(Periodogram {
        freqs: (0..t).map(|k| k as f64 / t as f64).collect(),
        power: buf.iter().map(|z| z.norm_sqr() / t as f64).collect(),
    })
}

/// Row `i` with missing entries replaced by the row mean.
fn imputed_row(data: &DataMatrix, i: usize) -> Result<Vec<f64>> {
    let obs = data.observed_row(i);
    if obs.is_empty() {
        return Err(Error::DegenerateRow(i));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    Ok((0..data.n_cols()).map(|c| data.get(i, c).unwrap_or(mean)).collect())
}

/// Periodogram of one row; gaps are mean-imputed with a warning.
pub fn power_spectrum(data: &DataMatrix, row: usize) -> Result<Periodogram> {
    if row >= data.n_rows() {
        return Err(Error::InvalidArgument(format!("row {row} out of range")));
    }
    if data.row_mask(row).iter().any(|&m| !m) {
        log::warn!("power_spectrum: row {row} has gaps; filled with the row mean");
    }
    periodogram(&imputed_row(data, row)?)
}

/// Mean periodogram of row `row` over `n_rep` sampled matrices.
pub fn ensemble_power_spectrum(model: &EnsembleModel, row: usize, n_rep: usize, seed: u64) -> Result<Periodogram> {
    if row >= model.n_rows() || n_rep == 0 {
        return Err(Error::InvalidArgument("row out of range or no replicates".into()));
    }
    let marginals = model.marginals()?;
    let spectra: Vec<Periodogram> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let m = model.draw_with(&marginals, seed, r as u64);
            imputed_row(&m, row).and_then(|s| periodogram(&s))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if spectra.is_empty() {
        return Err(Error::InsufficientSample("every sampled row was empty".into()));
    }
    let t = model.n_cols();
    let mut power = vec![0.0; t];
    for s in &spectra {
        for (p, v) in power.iter_mut().zip(&s.power) {
            *p += v;
        }
    }
    for p in &mut power {
        *p /= spectra.len() as f64;
    }
    Ok(Periodogram { freqs: spectra[0].freqs.clone(), power })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_peaks_at_its_frequency() {
        let t = 128;
        let s: Vec<f64> = (0..t).map(|k| (2.0 * std::f64::consts::PI * 8.0 * k as f64 / t as f64).sin()).collect();
        let p = periodogram(&s).unwrap();
        assert!((p.dominant_frequency() - 8.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn parseval() {
        let s: Vec<f64> = (0..97).map(|k| ((k * 37 % 11) as f64).sqrt() - 1.3).collect();
        let p = periodogram(&s).unwrap();
        let mean = s.iter().sum::<f64>() / 97.0;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 97.0;
        assert!((p.power.iter().sum::<f64>() - var * 97.0).abs() < 1e-8);
    }

    #[test]
    fn all_missing_row_is_an_error() {
        let d = DataMatrix::from_rows(vec![vec![f64::NAN; 4], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert!(power_spectrum(&d, 0).is_err());
        assert!(power_spectrum(&d, 1).is_ok());
    }
}
