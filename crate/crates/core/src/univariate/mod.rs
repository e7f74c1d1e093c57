//! Maximum-entropy models of a single time series with quantile-bin
//! constraints.
//!
//! Every family is a list of statistics `s_a(x) = x^p * 1[x in bin]` (or the
//! same power summed over all bins). The Hamiltonian is `sum_a theta_a S_a`,
//! so each bin carries the kernel `exp(-c0 - c1 x - c2 x^2)` and the
//! per-sample partition function is the sum of the bin integrals.

pub mod kernel;

pub use kernel::BinKernel;

use crate::data::QuantileGrid;
use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::rng::stream_rng;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Per-bin counts and sums: parameters `[alpha_1..alpha_B, beta_1..beta_B]`.
    H1,
    /// Per-bin counts, global sum and global sum of squares:
    /// parameters `[alpha_1..alpha_B, beta, gamma]`.
    H2,
    /// Sums in all bins but the last, plus the global sum of squares:
    /// parameters `[beta_1..beta_{B-1}, gamma]`. No count constraints.
    BinSumsSquares,
}

/// One sufficient statistic: `x^power`, restricted to `bin` when set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Statistic {
    pub power: u8,
    pub bin: Option<usize>,
}

impl Statistic {
    fn applies(&self, bin: usize) -> bool {
        self.bin.map_or(true, |b| b == bin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateSpec {
    pub grid: QuantileGrid,
    pub family: Family,
    /// Number of observations `T`.
    pub n_samples: usize,
}

/// Per-bin counts, sums and sums of squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStatistics {
    pub count: Vec<f64>,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl BinStatistics {
    pub fn total(&self) -> f64 {
        self.count.iter().sum()
    }
}

/// Counts and sums over half-open bins `[q_k, q_{k+1})` (the last bin closed).
pub fn bin_statistics(series: &[f64], grid: &QuantileGrid) -> Result<BinStatistics> {
    let nb = grid.n_bins();
    let mut bs = BinStatistics {
        count: vec![0.0; nb],
        sum: vec![0.0; nb],
        sum_sq: vec![0.0; nb],
    };
    for (index, &x) in series.iter().enumerate() {
        let k = grid.locate(x).ok_or(Error::OutOfSupport {
            index,
            value: x,
            lo: grid.lower(),
            hi: grid.upper(),
        })?;
        bs.count[k] += 1.0;
        bs.sum[k] += x;
        bs.sum_sq[k] += x * x;
    }
    Ok(bs)
}

impl UnivariateSpec {
    pub fn new(grid: QuantileGrid, family: Family, n_samples: usize) -> Result<Self> {
        if grid.is_degenerate() {
            return Err(Error::InvalidGrid("zero-width bin".into()));
        }
        if family == Family::BinSumsSquares && grid.n_bins() < 2 {
            return Err(Error::InvalidGrid("bin-sum family needs at least two bins".into()));
        }
        Ok(Self { grid, family, n_samples })
    }

    pub fn n_bins(&self) -> usize {
        self.grid.n_bins()
    }

    pub fn statistics(&self) -> Vec<Statistic> {
        let nb = self.n_bins();
        let per_bin = |power: u8, bins: usize| (0..bins).map(move |k| Statistic { power, bin: Some(k) });
        match self.family {
            Family::H1 => per_bin(0, nb).chain(per_bin(1, nb)).collect(),
            Family::H2 => per_bin(0, nb)
                .chain([Statistic { power: 1, bin: None }, Statistic { power: 2, bin: None }])
                .collect(),
            Family::BinSumsSquares => per_bin(1, nb - 1)
                .chain([Statistic { power: 2, bin: None }])
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.statistics().len()
    }

    /// Index of the parameter fixed to zero by the gauge convention
    /// (`alpha_1 = 0`), if the family has a count multiplier per bin.
    pub fn gauge_index(&self) -> Option<usize> {
        match self.family {
            Family::H1 | Family::H2 => Some(0),
            Family::BinSumsSquares => None,
        }
    }

    /// Parameter count used by the information criteria; the gauge-fixed
    /// multiplier is counted.
    pub fn ic_param_count(&self) -> usize {
        self.n_params()
    }

    /// Observed statistic totals `S_a = sum_t s_a(x_t)`.
    pub fn empirical_statistics(&self, bs: &BinStatistics) -> Vec<f64> {
        self.statistics()
            .iter()
            .map(|s| {
                let pick = |k: usize| match s.power {
                    0 => bs.count[k],
                    1 => bs.sum[k],
                    _ => bs.sum_sq[k],
                };
                match s.bin {
                    Some(k) => pick(k),
                    None => (0..bs.count.len()).map(pick).sum(),
                }
            })
            .collect()
    }

    /// Kernel coefficients `(c0, kernel)` of every bin.
    pub fn kernels(&self, params: &[f64]) -> Result<Vec<(f64, BinKernel)>> {
        let stats = self.statistics();
        if params.len() != stats.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                stats.len(),
                params.len()
            )));
        }
        let mut out = Vec::with_capacity(self.n_bins());
        for k in 0..self.n_bins() {
            let (lo, hi) = self.grid.bin(k);
            let mut c = [0.0; 3];
            for (s, &theta) in stats.iter().zip(params) {
                if s.applies(k) {
                    c[s.power as usize] += theta;
                }
            }
            out.push((c[0], BinKernel::new(lo, hi, c[1], c[2])));
        }
        Ok(out)
    }

    /// Evaluates `ln Z` per sample, bin probabilities and the mean (and
    /// optionally the covariance) of the statistics under one draw.
    pub fn evaluate(&self, params: &[f64], with_cov: bool) -> Result<Evaluation> {
        let kernels = self.kernels(params)?;
        let mut ln_z = Vec::with_capacity(kernels.len());
        let mut moments = Vec::with_capacity(kernels.len());
        for (c0, k) in &kernels {
            ln_z.push(-c0 + k.ln_integral()?);
            moments.push(k.raw_moments());
        }
        let top = ln_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::DivergentPartition("non-finite bin weight".into()));
        }
        let total: f64 = ln_z.iter().map(|l| (l - top).exp()).sum();
        let ln_z1 = top + total.ln();
        let probs: Vec<f64> = ln_z.iter().map(|l| (l - ln_z1).exp()).collect();

        let stats = self.statistics();
        let mean: Vec<f64> = stats
            .iter()
            .map(|s| {
                (0..probs.len())
                    .filter(|&k| s.applies(k))
                    .map(|k| probs[k] * moments[k][s.power as usize])
                    .sum()
            })
            .collect();
        let cov = with_cov.then(|| {
            let n = stats.len();
            DMatrix::from_fn(n, n, |a, b| {
                let (sa, sb) = (stats[a], stats[b]);
                let second: f64 = (0..probs.len())
                    .filter(|&k| sa.applies(k) && sb.applies(k))
                    .map(|k| probs[k] * moments[k][(sa.power + sb.power) as usize])
                    .sum();
                second - mean[a] * mean[b]
            })
        });
        Ok(Evaluation { ln_z1, probs, mean, cov, kernels })
    }
}

/// Quantities of one model evaluation, per observation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub ln_z1: f64,
    pub probs: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: Option<DMatrix<f64>>,
    pub kernels: Vec<(f64, BinKernel)>,
}

/// `ln Z = T ln sum_k z_k`.
pub fn log_partition(spec: &UnivariateSpec, params: &[f64]) -> Result<f64> {
    Ok(spec.n_samples as f64 * spec.evaluate(params, false)?.ln_z1)
}

/// Log-likelihood `-theta . S - ln Z` of observed totals `stats`.
pub fn log_likelihood(spec: &UnivariateSpec, params: &[f64], stats: &[f64]) -> Result<f64> {
    let ev = spec.evaluate(params, false)?;
    let energy: f64 = params.iter().zip(stats).map(|(p, s)| p * s).sum();
    Ok(-energy - spec.n_samples as f64 * ev.ln_z1)
}

/// Gradient of [`log_likelihood`] with respect to the parameters,
/// `T E[s] - S` (expected minus observed totals).
pub fn log_likelihood_gradient(spec: &UnivariateSpec, params: &[f64], stats: &[f64]) -> Result<Vec<f64>> {
    let ev = spec.evaluate(params, false)?;
    let t = spec.n_samples as f64;
    Ok(ev.mean.iter().zip(stats).map(|(m, s)| t * m - s).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Aic,
    Bic,
}

/// `AIC = 2k - 2 ln L`.
pub fn aic(k: usize, ln_l: f64) -> f64 {
    2.0 * k as f64 - 2.0 * ln_l
}

/// `BIC = k ln T - 2 ln L`.
pub fn bic(k: usize, ln_l: f64, n: usize) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * ln_l
}

/// A univariate ensemble at fixed parameters, optionally tied to the
/// observed statistic totals it was calibrated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateModel {
    pub spec: UnivariateSpec,
    pub params: Vec<f64>,
    pub constraints: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    family: Family,
    grid: QuantileGrid,
    n_samples: usize,
    params: Vec<f64>,
    constraints: Option<Vec<f64>>,
    gauge: String,
}

impl UnivariateModel {
    pub fn new(spec: UnivariateSpec, params: Vec<f64>) -> Result<Self> {
        spec.evaluate(&params, false)?;
        Ok(Self { spec, params, constraints: None })
    }

    pub fn with_constraints(mut self, constraints: Vec<f64>) -> Result<Self> {
        if constraints.len() != self.params.len() {
            return Err(Error::ShapeMismatch("constraint vector length".into()));
        }
        self.constraints = Some(constraints);
        Ok(self)
    }

    /// Attaches the model's own expected totals as constraints, which makes
    /// the current parameters the likelihood maximizer.
    pub fn self_calibrated(self) -> Result<Self> {
        let expected = self.expected_statistics()?;
        self.with_constraints(expected)
    }

    fn eval(&self) -> Evaluation {
        // admissibility was checked at construction
        self.spec
            .evaluate(&self.params, false)
            .expect("parameters were validated at construction")
    }

    pub fn log_partition(&self) -> f64 {
        self.spec.n_samples as f64 * self.eval().ln_z1
    }

    pub fn bin_probabilities(&self) -> Vec<f64> {
        self.eval().probs
    }

    /// Expected statistic totals `T E[s]`.
    pub fn expected_statistics(&self) -> Result<Vec<f64>> {
        let t = self.spec.n_samples as f64;
        Ok(self.spec.evaluate(&self.params, false)?.mean.iter().map(|m| t * m).collect())
    }

    /// Covariance of the statistics for a single draw.
    pub fn statistic_covariance(&self) -> DMatrix<f64> {
        self.spec
            .evaluate(&self.params, true)
            .expect("parameters were validated at construction")
            .cov
            .unwrap()
    }

    pub fn density(&self, x: f64) -> f64 {
        let Some(k) = self.spec.grid.locate(x) else {
            return 0.0;
        };
        let ev = self.eval();
        let (_, kern) = ev.kernels[k];
        match kern.ln_pdf(x) {
            Ok(l) => ev.probs[k] * l.exp(),
            Err(_) => 0.0,
        }
    }

    /// `ln density(x)`, `-inf` outside the support.
    pub fn ln_density(&self, x: f64) -> f64 {
        let Some(k) = self.spec.grid.locate(x) else {
            return f64::NEG_INFINITY;
        };
        let ev = self.eval();
        match ev.kernels[k].1.ln_pdf(x) {
            Ok(l) if ev.probs[k] > 0.0 => ev.probs[k].ln() + l,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.spec.grid.lower() {
            return 0.0;
        }
        if x >= self.spec.grid.upper() {
            return 1.0;
        }
        let ev = self.eval();
        let k = self.spec.grid.locate(x).unwrap();
        let below: f64 = ev.probs[..k].iter().sum();
        (below + ev.probs[k] * ev.kernels[k].1.cdf(x)).clamp(0.0, 1.0)
    }

    /// Inverse CDF at probability `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let ev = self.eval();
        quantile_from(&ev, p)
    }

    /// `n` i.i.d. draws, reproducible for a given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let ev = self.eval();
        let mut rng = stream_rng(seed, 0);
        let cum = cumulative(&ev.probs);
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
                let v: f64 = rng.gen();
                ev.kernels[k].1.quantile(v)
            })
            .collect()
    }

    /// Maximized log-likelihood at the stored constraints.
    pub fn log_likelihood(&self) -> Result<f64> {
        let c = self.constraints.as_ref().ok_or(Error::NotCalibrated)?;
        log_likelihood(&self.spec, &self.params, c)
    }

    pub fn information_criterion(&self, which: Criterion) -> Result<f64> {
        let ln_l = self.log_likelihood()?;
        let k = self.spec.ic_param_count();
        Ok(match which {
            Criterion::Aic => aic(k, ln_l),
            Criterion::Bic => bic(k, ln_l, self.spec.n_samples),
        })
    }

    /// Gibbs entropy `ln Z + theta . S` at the stored constraints.
    pub fn entropy(&self) -> Result<f64> {
        let c = self.constraints.as_ref().ok_or(Error::NotCalibrated)?;
        let energy: f64 = self.params.iter().zip(c).map(|(p, s)| p * s).sum();
        Ok(self.log_partition() + energy)
    }

    /// Breakpoints of the density (finite grid points).
    pub fn breakpoints(&self) -> Vec<f64> {
        self.spec.grid.q().to_vec()
    }

    pub fn to_json(&self) -> Result<String> {
        let j = ModelJson {
            family: self.spec.family,
            grid: self.spec.grid.clone(),
            n_samples: self.spec.n_samples,
            params: self.params.clone(),
            constraints: self.constraints.clone(),
            gauge: match self.spec.gauge_index() {
                Some(_) => "alpha1=0".into(),
                None => "none".into(),
            },
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(s)?;
        let spec = UnivariateSpec::new(j.grid, j.family, j.n_samples)?;
        let m = Self::new(spec, j.params)?;
        match j.constraints {
            Some(c) => m.with_constraints(c),
            None => Ok(m),
        }
    }
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn quantile_from(ev: &Evaluation, p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let cum = cumulative(&ev.probs);
    let k = cum.partition_point(|&c| c < p).min(cum.len() - 1);
    let below = if k == 0 { 0.0 } else { cum[k - 1] };
    let v = if ev.probs[k] > 0.0 { (p - below) / ev.probs[k] } else { 0.0 };
    ev.kernels[k].1.quantile(v)
}

/// Something with a density on the real line.
pub trait Density {
    fn pdf(&self, x: f64) -> f64;

    /// Log density; implementors with light tails should override this so
    /// that it stays finite where `pdf` underflows.
    fn ln_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }
}

impl Density for UnivariateModel {
    fn pdf(&self, x: f64) -> f64 {
        self.density(x)
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_density(x)
    }
}

impl<F: Fn(f64) -> f64> Density for F {
    fn pdf(&self, x: f64) -> f64 {
        self(x)
    }
}

const TAIL_CUTOFF: f64 = 1e-12;
const KL_TOL: f64 = 1e-8;

/// Walks outward from `start` until both densities fall below the tail
/// cutoff.
fn tail_end(p: &dyn Density, q: &dyn Density, start: f64, dir: f64) -> f64 {
    let mut step = 1.0_f64.max(start.abs() * 0.1);
    let mut x = start;
    for _ in 0..200 {
        x += dir * step;
        if p.pdf(x) < TAIL_CUTOFF && q.pdf(x) < TAIL_CUTOFF {
            return x;
        }
        step *= 1.5;
    }
    x
}

/// `KL(p || q)` by adaptive quadrature between consecutive breakpoints.
///
/// Infinite outer breakpoints are replaced by the point where both
/// densities drop below `1e-12`.
pub fn kl_divergence(p: &dyn Density, q: &dyn Density, breakpoints: &[f64]) -> Result<f64> {
    if breakpoints.len() < 2 {
        return Err(Error::InvalidGrid("need at least two breakpoints".into()));
    }
    let mut pts: Vec<f64> = breakpoints.to_vec();
    let first_finite = pts.iter().cloned().find(|v| v.is_finite());
    let last_finite = pts.iter().rev().cloned().find(|v| v.is_finite());
    let (Some(ff), Some(lf)) = (first_finite, last_finite) else {
        return Err(Error::InvalidGrid("no finite breakpoint".into()));
    };
    if pts[0] == f64::NEG_INFINITY {
        pts[0] = tail_end(p, q, ff, -1.0);
    }
    let n = pts.len();
    if pts[n - 1] == f64::INFINITY {
        pts[n - 1] = tail_end(p, q, lf, 1.0);
    }
    let mismatch = std::cell::Cell::new(None);
    let integrand = |x: f64| {
        let pv = p.pdf(x);
        if pv <= 0.0 {
            return 0.0;
        }
        let lq = q.ln_pdf(x);
        if lq == f64::NEG_INFINITY {
            mismatch.set(Some(x));
            return 0.0;
        }
        pv * (p.ln_pdf(x) - lq)
    };
    let mut total = 0.0;
    for w in pts.windows(2) {
        if w[1] > w[0] {
            total += adaptive_simpson(&integrand, w[0], w[1], KL_TOL);
        }
    }
    if let Some(x) = mismatch.get() {
        return Err(Error::SupportError(format!("reference density vanishes at {x} where the model is positive")));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(q: &[f64]) -> QuantileGrid {
        QuantileGrid::from_breaks(q.to_vec()).unwrap()
    }

    #[test]
    fn bin_statistics_hand_example() {
        let bs = bin_statistics(&[-2.0, -1.0, 1.0, 2.0], &grid(&[f64::NEG_INFINITY, 0.0, f64::INFINITY])).unwrap();
        assert_eq!(bs.count, vec![2.0, 2.0]);
        assert_eq!(bs.sum, vec![-3.0, 3.0]);
        assert_eq!(bs.sum_sq, vec![5.0, 5.0]);
    }

    #[test]
    fn bin_statistics_single_bin_and_support() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let bs = bin_statistics(&[0.1, 0.5, 0.9], &g).unwrap();
        assert_eq!(bs.count[1], 0.0);
        assert_eq!(bs.sum[1], 0.0);
        assert_eq!(bs.sum_sq[1], 0.0);
        let err = bin_statistics(&[0.5, 2.5], &g).unwrap_err();
        assert!(matches!(err, Error::OutOfSupport { index: 1, .. }));
    }

    #[test]
    fn partition_function_examples() {
        let s = UnivariateSpec::new(grid(&[0.0, 1.0]), Family::H1, 10).unwrap();
        assert!(log_partition(&s, &[0.0, 1e-12]).unwrap().abs() < 1e-10);
        let s = UnivariateSpec::new(grid(&[0.0, f64::INFINITY]), Family::H1, 10).unwrap();
        assert!(log_partition(&s, &[0.0, 1.0]).unwrap().abs() < 1e-12);
        let s = UnivariateSpec::new(grid(&[f64::NEG_INFINITY, f64::INFINITY]), Family::H2, 7).unwrap();
        let ln_z = log_partition(&s, &[0.0, 0.0, 0.5]).unwrap();
        // quadrature oracle of the Gaussian integral
        let quad = adaptive_simpson(&|x: f64| (-0.5 * x * x).exp(), -40.0, 40.0, 1e-12);
        assert!((ln_z - 7.0 * quad.ln()).abs() < 1e-9);
    }

    #[test]
    fn divergent_tail_is_rejected() {
        let s = UnivariateSpec::new(grid(&[0.0, f64::INFINITY]), Family::H1, 1).unwrap();
        assert!(matches!(log_partition(&s, &[0.0, -1.0]), Err(Error::DivergentPartition(_))));
    }

    #[test]
    fn density_examples() {
        let s = UnivariateSpec::new(grid(&[0.0, 1.0]), Family::H1, 1).unwrap();
        let m = UnivariateModel::new(s, vec![0.0, 0.0]).unwrap();
        assert!((m.density(0.3) - 1.0).abs() < 1e-14);
        assert_eq!(m.density(1.5), 0.0);
        assert!((m.cdf(0.25) - 0.25).abs() < 1e-14);

        let s = UnivariateSpec::new(grid(&[f64::NEG_INFINITY, f64::INFINITY]), Family::H2, 1).unwrap();
        let m = UnivariateModel::new(s, vec![0.0, 0.0, 0.5]).unwrap();
        assert!((m.density(0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-14);
        assert!((m.quantile(0.95) - 1.644_853_626_951_472).abs() < 1e-9);
    }

    #[test]
    fn sampling_matches_bin_probabilities() {
        let s = UnivariateSpec::new(grid(&[f64::NEG_INFINITY, -0.5, 0.3, f64::INFINITY]), Family::H1, 1).unwrap();
        let m = UnivariateModel::new(s.clone(), vec![0.0, 0.4, -0.2, -1.5, 0.7, 2.0]).unwrap();
        let n = 100_000;
        let draws = m.sample(n, 11);
        let bs = bin_statistics(&draws, &s.grid).unwrap();
        for (k, p) in m.bin_probabilities().iter().enumerate() {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((bs.count[k] / n as f64 - p).abs() < 4.0 * sd);
        }
        assert_eq!(draws, m.sample(n, 11));
    }

    #[test]
    fn kl_examples() {
        let n0 = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let n1 = |x: f64| (-0.5 * (x - 1.0) * (x - 1.0)).exp() / (2.0 * PI).sqrt();
        let inf = [f64::NEG_INFINITY, 0.0, f64::INFINITY];
        assert!(kl_divergence(&n0, &n0, &inf).unwrap().abs() < 1e-8);
        assert!((kl_divergence(&n0, &n1, &inf).unwrap() - 0.5).abs() < 1e-6);
        let narrow = |x: f64| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
        let wide = |x: f64| if (0.0..0.5).contains(&x) { 2.0 } else { 0.0 };
        assert!(matches!(kl_divergence(&narrow, &wide, &[0.0, 0.5, 1.0]), Err(Error::SupportError(_))));
    }

    #[test]
    fn information_criteria() {
        assert_eq!(aic(0, 0.0), 0.0);
        assert_eq!(aic(5, -10.0) - aic(4, -10.0), 2.0);
        let s = UnivariateSpec::new(grid(&[0.0, 1.0]), Family::H1, 3).unwrap();
        let m = UnivariateModel::new(s, vec![0.0, 0.0]).unwrap();
        assert_eq!(m.information_criterion(Criterion::Aic), Err(Error::NotCalibrated));
        let m = m.self_calibrated().unwrap();
        // uniform on [0, 1] has zero log-likelihood
        assert!(m.information_criterion(Criterion::Aic).unwrap() - 4.0 < 1e-12);
        assert!((m.information_criterion(Criterion::Bic).unwrap() - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_keeps_infinite_endpoints() {
        let s = UnivariateSpec::new(grid(&[f64::NEG_INFINITY, 0.0, f64::INFINITY]), Family::H1, 4).unwrap();
        let m = UnivariateModel::new(s, vec![0.0, 0.1, -1.0, 1.0]).unwrap().self_calibrated().unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("alpha1=0"));
        let back = UnivariateModel::from_json(&text).unwrap();
        assert_eq!(back, m);
    }

    fn h1_params() -> impl Strategy<Value = Vec<f64>> {
        (
            prop::collection::vec(-1.0..1.0f64, 3),
            0.2..3.0f64,
            -2.0..2.0f64,
            0.2..3.0f64,
        )
            .prop_map(|(a, b_lo, b_mid, b_hi)| vec![0.0, a[1], a[2], -b_lo, b_mid, b_hi])
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(params in h1_params()) {
            let s = UnivariateSpec::new(grid(&[f64::NEG_INFINITY, -0.7, 0.4, f64::INFINITY]), Family::H1, 5).unwrap();
            let stats = vec![1.0, 2.0, 2.0, -1.5, 0.2, 2.5];
            let g = log_likelihood_gradient(&s, &params, &stats).unwrap();
            for a in 0..params.len() {
                let h = 1e-6;
                let mut up = params.clone();
                let mut dn = params.clone();
                up[a] += h;
                dn[a] -= h;
                let fd = (log_likelihood(&s, &up, &stats).unwrap() - log_likelihood(&s, &dn, &stats).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[a]).abs() <= 1e-5 * g[a].abs().max(1.0));
            }
        }

        #[test]
        fn probabilities_sum_to_one_and_bins_integrate(params in h1_params()) {
            let s = UnivariateSpec::new(grid(&[f64::NEG_INFINITY, -0.7, 0.4, f64::INFINITY]), Family::H1, 1).unwrap();
            let m = UnivariateModel::new(s, params).unwrap();
            let p = m.bin_probabilities();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mass = adaptive_simpson(&|x: f64| m.density(x), -0.7, 0.4, 1e-12);
            prop_assert!((mass - p[1]).abs() < 1e-8);
            prop_assert!((m.cdf(0.4) - p[0] - p[1]).abs() < 1e-12);
        }

        #[test]
        fn near_zero_slope_is_continuous(alpha in -1.0..1.0f64) {
            let s = UnivariateSpec::new(grid(&[-1.0, 0.5, 2.0]), Family::H1, 3).unwrap();
            let a = log_partition(&s, &[0.0, alpha, 0.3, 1e-9]).unwrap();
            let b = log_partition(&s, &[0.0, alpha, 0.3, 0.0]).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
