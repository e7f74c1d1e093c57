//! Brute-force partition functions for tiny problems, used to check the
//! closed forms.

use crate::error::{Error, Result};
use crate::multivariate::{MultiplierSet, Variant};
use crate::quadrature::composite_simpson;
use crate::univariate::UnivariateSpec;

/// Largest number of cells the enumeration accepts.
pub const MAX_CELLS: usize = 6;

/// `ln Z` of the matrix ensemble by summing `exp(-H)` over every occupancy
/// pattern, with magnitudes integrated by composite Simpson on
/// `[0, 40 / rate]` with `resolution` panels.
pub fn brute_force_log_partition(ms: &MultiplierSet, resolution: usize) -> Result<f64> {
    ms.validate_shape()?;
    let (n, t) = (ms.n_rows(), ms.n_cols());
    let cells = n * t;
    if cells > MAX_CELLS {
        return Err(Error::OracleTooLarge(format!("{n} x {t} exceeds {MAX_CELLS} cells")));
    }
    // per cell: weight of (empty, positive, negative)
    let mut weights = Vec::with_capacity(cells);
    for i in 0..n {
        for c in 0..t {
            let s = ms.cell_sums(i, c);
            if !(s.g > 0.0) || !(s.s > 0.0) {
                return Err(Error::DivergentPartition(format!("cell ({i}, {c})")));
            }
            let magnitude = |rate: f64| composite_simpson(&|w: f64| (-rate * w).exp(), 0.0, 40.0 / rate, resolution);
            let empty = if ms.variant == Variant::WithMissing { 1.0 } else { 0.0 };
            weights.push([empty, (-s.a).exp() * magnitude(s.g), (-s.b).exp() * magnitude(s.s)]);
        }
    }
    let states = 3usize.pow(cells as u32);
    let mut total = 0.0;
    for code in 0..states {
        let mut k = code;
        let mut w = 1.0;
        for cell in &weights {
            w *= cell[k % 3];
            k /= 3;
        }
        total += w;
    }
    Ok(total.ln())
}

/// `ln Z` of a univariate model by quadrature of `exp(-H)` for one
/// observation, times `T`.
pub fn brute_force_univariate(spec: &UnivariateSpec, params: &[f64], resolution: usize) -> Result<f64> {
    let kernels = spec.kernels(params)?;
    let mut total = 0.0;
    for (c0, k) in kernels {
        k.ln_integral()?;
        let ln_f = |x: f64| -c0 - k.c1 * x - k.c2 * x * x;
        // with both ends open the Gaussian vertex is the natural anchor
        let centre = if k.c2 > 0.0 { -k.c1 / (2.0 * k.c2) } else { 0.0 };
        let lo = if k.lo.is_finite() { k.lo } else { tail(&ln_f, if k.hi.is_finite() { k.hi } else { centre }, -1.0) };
        let hi = if k.hi.is_finite() { k.hi } else { tail(&ln_f, if k.lo.is_finite() { k.lo } else { centre }, 1.0) };
        // split wide ranges so the fixed-panel rule resolves the peak
        let pieces = 64;
        let width = (hi - lo) / pieces as f64;
        for p in 0..pieces {
            let a = lo + p as f64 * width;
            total += composite_simpson(&|x: f64| ln_f(x).exp(), a, a + width, resolution);
        }
    }
    Ok(spec.n_samples as f64 * total.ln())
}

/// Point beyond which the integrand is negligible relative to its peak.
fn tail(ln_f: &dyn Fn(f64) -> f64, start: f64, dir: f64) -> f64 {
    let mut x = start;
    let mut step = 1.0;
    let mut peak = ln_f(x);
    for _ in 0..400 {
        x += dir * step;
        let v = ln_f(x);
        peak = peak.max(v);
        if v < peak - 60.0 {
            return x;
        }
        step *= 1.3;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::QuantileGrid;
    use crate::univariate::{log_partition, Family};

    #[test]
    fn three_state_cell() {
        let ms = MultiplierSet::uniform(1, 1, Variant::WithMissing, 1.0, 1.0);
        let ln_z = brute_force_log_partition(&ms, 2000).unwrap();
        assert!((ln_z - 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn too_large_is_refused() {
        let ms = MultiplierSet::uniform(3, 3, Variant::WithMissing, 1.0, 1.0);
        assert!(matches!(brute_force_log_partition(&ms, 10), Err(Error::OracleTooLarge(_))));
    }

    #[test]
    fn gaussian_univariate() {
        let grid = QuantileGrid::from_breaks(vec![f64::NEG_INFINITY, f64::INFINITY]).unwrap();
        let spec = UnivariateSpec::new(grid, Family::H2, 1).unwrap();
        let ln_z = brute_force_univariate(&spec, &[0.0, 0.0, 0.5], 200).unwrap();
        assert!((ln_z - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-6);
        assert!((ln_z - log_partition(&spec, &[0.0, 0.0, 0.5]).unwrap()).abs() < 1e-6);
    }
}
