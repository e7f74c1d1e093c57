use super::solver::{maximize, Concave};
use super::{CalibrationOptions, CalibrationResult, Residual};
use crate::data::QuantileGrid;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::univariate::{bin_statistics, BinKernel, Family, UnivariateModel, UnivariateSpec};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

struct Problem<'a> {
    spec: &'a UnivariateSpec,
    stats: &'a [f64],
    free: Vec<usize>,
}

impl Problem<'_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.spec.n_params()];
        for (&i, &v) in self.free.iter().zip(x) {
            p[i] = v;
        }
        p
    }

    fn expected(&self, x: &[f64]) -> Vec<f64> {
        let t = self.spec.n_samples as f64;
        let ev = self.spec.evaluate(&self.full(x), false).expect("admissible point");
        ev.mean.iter().map(|m| m * t).collect()
    }
}

impl Concave for Problem<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        crate::univariate::log_likelihood(self.spec, &self.full(x), self.stats)
            .ok()
            .filter(|v| v.is_finite())
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let e = self.expected(x);
        self.free.iter().map(|&i| e[i] - self.stats[i]).collect()
    }

    fn residual(&self, x: &[f64]) -> f64 {
        let e = self.expected(x);
        e.iter()
            .zip(self.stats)
            .map(|(e, s)| (e - s).abs() / s.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    fn newton_direction(&self, x: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        let t = self.spec.n_samples as f64;
        let cov = self.spec.evaluate(&self.full(x), true).ok()?.cov?;
        let n = self.free.len();
        let h = DMatrix::from_fn(n, n, |a, b| t * cov[(self.free[a], self.free[b])]);
        solve_spd(&h, &DVector::from_column_slice(g)).map(|d| d.as_slice().to_vec())
    }

    fn curvature(&self, x: &[f64]) -> Vec<f64> {
        let t = self.spec.n_samples as f64;
        let cov = self.spec.evaluate(&self.full(x), true).unwrap().cov.unwrap();
        self.free.iter().map(|&i| t * cov[(i, i)]).collect()
    }
}

/// Cholesky solve with an escalating ridge for nearly singular systems.
pub(crate) fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
    }
    None
}

fn names(spec: &UnivariateSpec) -> Vec<String> {
    spec.statistics()
        .iter()
        .map(|s| {
            let base = ["N", "M", "M2"][s.power as usize];
            match s.bin {
                Some(k) => format!("{base}[{k}]"),
                None => base.to_string(),
            }
        })
        .collect()
}

/// Slope `c1` of the exponential kernel on `[lo, hi]` whose mean is `m`.
fn slope_for_mean(lo: f64, hi: f64, m: f64) -> Result<f64> {
    if !(m > lo && m < hi) {
        return Err(Error::InfeasibleConstraints(format!(
            "bin mean {m} is not strictly inside [{lo}, {hi}]"
        )));
    }
    if hi.is_infinite() {
        return Ok(1.0 / (m - lo));
    }
    if lo.is_infinite() {
        return Ok(-1.0 / (hi - m));
    }
    let mean = |c: f64| BinKernel::new(lo, hi, c, 0.0).raw_moments()[1];
    let width = hi - lo;
    let (mut a, mut b) = (-1.0 / width, 1.0 / width);
    while mean(a) < m {
        a *= 2.0;
    }
    while mean(b) > m {
        b *= 2.0;
    }
    for _ in 0..200 {
        let c = 0.5 * (a + b);
        if mean(c) > m {
            a = c;
        } else {
            b = c;
        }
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

fn check_feasible(spec: &UnivariateSpec, stats: &[f64]) -> Result<()> {
    let t = spec.n_samples as f64;
    if spec.n_samples == 0 {
        return Err(Error::InsufficientSample("no observations".into()));
    }
    let nb = spec.n_bins();
    match spec.family {
        Family::H1 | Family::H2 => {
            let counts = &stats[..nb];
            if let Some(k) = counts.iter().position(|&c| c <= 0.0) {
                return Err(Error::InfeasibleConstraints(format!("bin {k} is empty")));
            }
            let total: f64 = counts.iter().sum();
            if (total - t).abs() > 1e-9 * t {
                return Err(Error::InfeasibleConstraints(format!(
                    "bin counts sum to {total}, expected {t}"
                )));
            }
            if spec.family == Family::H2 {
                let var = stats[nb + 1] / t - (stats[nb] / t).powi(2);
                if !(var > 0.0) {
                    return Err(Error::InfeasibleConstraints("zero variance".into()));
                }
            }
        }
        Family::BinSumsSquares => {
            if !(stats[nb - 1] > 0.0) {
                return Err(Error::InfeasibleConstraints("zero second moment".into()));
            }
        }
    }
    Ok(())
}

/// Starting point of the solver.
///
/// H1 is solved exactly bin by bin; H2 starts from the Gaussian with the
/// observed mean and variance; the bin-sum family from a centered Gaussian.
pub fn initial_params(spec: &UnivariateSpec, stats: &[f64]) -> Result<Vec<f64>> {
    check_feasible(spec, stats)?;
    let nb = spec.n_bins();
    let t = spec.n_samples as f64;
    let alphas = |kernels: &[BinKernel]| -> Result<Vec<f64>> {
        let mut a = Vec::with_capacity(nb);
        for (k, kern) in kernels.iter().enumerate() {
            a.push(kern.ln_integral()? - stats[k].ln());
        }
        let a0 = a[0];
        Ok(a.iter().map(|v| v - a0).collect())
    };
    match spec.family {
        Family::H1 => {
            let mut kernels = Vec::with_capacity(nb);
            let mut betas = Vec::with_capacity(nb);
            for k in 0..nb {
                let (lo, hi) = spec.grid.bin(k);
                let c1 = slope_for_mean(lo, hi, stats[nb + k] / stats[k])?;
                kernels.push(BinKernel::new(lo, hi, c1, 0.0));
                betas.push(c1);
            }
            let mut p = alphas(&kernels)?;
            p.extend(betas);
            Ok(p)
        }
        Family::H2 => {
            let mean = stats[nb] / t;
            let var = stats[nb + 1] / t - mean * mean;
            let (beta, gamma) = (-mean / var, 0.5 / var);
            let kernels: Vec<BinKernel> = (0..nb)
                .map(|k| {
                    let (lo, hi) = spec.grid.bin(k);
                    BinKernel::new(lo, hi, beta, gamma)
                })
                .collect();
            let mut p = alphas(&kernels)?;
            p.extend([beta, gamma]);
            Ok(p)
        }
        Family::BinSumsSquares => {
            let m2 = stats[nb - 1] / t;
            let mut p = vec![0.0; nb];
            p[nb - 1] = 0.5 / m2;
            Ok(p)
        }
    }
}

/// Calibrates `spec` against observed statistic totals.
pub fn calibrate_univariate(
    spec: &UnivariateSpec,
    stats: &[f64],
    opts: &CalibrationOptions,
) -> Result<(UnivariateModel, CalibrationResult)> {
    opts.validate()?;
    if stats.len() != spec.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} statistics, got {}",
            spec.n_params(),
            stats.len()
        )));
    }
    let mut x0 = initial_params(spec, stats)?;
    let free: Vec<usize> = (0..x0.len()).filter(|&i| Some(i) != spec.gauge_index()).collect();
    let problem = Problem { spec, stats, free: free.clone() };
    if let Some(seed) = opts.seed {
        jitter(spec, &mut x0, &free, seed);
    }
    let start: Vec<f64> = free.iter().map(|&i| x0[i]).collect();
    let out = maximize(&problem, start, opts);
    let params = problem.full(&out.x);
    let expected = problem.expected(&out.x);
    let residuals = names(spec)
        .into_iter()
        .zip(stats.iter().zip(&expected))
        .map(|(n, (&s, &e))| Residual::new(n, s, e))
        .collect();
    let model = UnivariateModel::new(spec.clone(), params.clone())?.with_constraints(stats.to_vec())?;
    let result = CalibrationResult {
        multipliers: params,
        converged: out.converged,
        iterations: out.iterations,
        max_rel_constraint_err: out.residual,
        final_log_likelihood: out.value,
        dropped_constraints: Vec::new(),
        residuals,
        history: out.history,
        method: opts.method,
        diagnostics: out.notes,
    };
    Ok((model, result))
}

/// Random perturbation of the starting point that stays admissible.
fn jitter(spec: &UnivariateSpec, x: &mut [f64], free: &[usize], seed: u64) {
    let mut rng = stream_rng(seed, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let base = x.to_vec();
    let mut scale = 0.3;
    for _ in 0..40 {
        let mut trial = base.clone();
        for &i in free {
            trial[i] = base[i] + scale * normal.sample(&mut rng) * base[i].abs().max(0.1);
        }
        if spec.evaluate(&trial, false).is_ok() {
            x.copy_from_slice(&trial);
            return;
        }
        scale *= 0.5;
    }
}

/// Bins `series` on `grid` and calibrates `family` to it.
pub fn calibrate_series(
    series: &[f64],
    grid: &QuantileGrid,
    family: Family,
    opts: &CalibrationOptions,
) -> Result<(UnivariateModel, CalibrationResult)> {
    let spec = UnivariateSpec::new(grid.clone(), family, series.len())?;
    let bs = bin_statistics(series, grid)?;
    let stats = spec.empirical_statistics(&bs);
    calibrate_univariate(&spec, &stats, opts)
}
