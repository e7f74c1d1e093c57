//! Synthetic data sets for tests, examples and the CLI.

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};
use statrs::distribution::{Continuous, StudentsT};

/// Balanced mixture of a standard normal and a Student-t with `nu` degrees
/// of freedom.
pub fn gaussian_student_mixture(n: usize, nu: f64, seed: u64) -> Result<Vec<f64>> {
    let t = StudentT::new(nu).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = stream_rng(seed, 0);
    Ok((0..n)
        .map(|_| if rng.gen::<bool>() { normal.sample(&mut rng) } else { t.sample(&mut rng) })
        .collect())
}

/// Density of [`gaussian_student_mixture`].
pub fn mixture_density(x: f64, nu: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, nu).expect("positive degrees of freedom");
    0.5 * crate::special::normal_pdf(x) + 0.5 * t.pdf(x)
}

/// Unit-variance Student-t draws (`nu > 2`).
fn scaled_t(nu: f64) -> impl Fn(&mut crate::rng::StreamRng) -> f64 {
    let t = StudentT::new(nu).expect("positive degrees of freedom");
    let scale = ((nu - 2.0) / nu).sqrt();
    move |rng| t.sample(rng) * scale
}

/// One-factor market `r_it = beta_i f_t + e_it` with Student-t(`nu`)
/// factor and noise, rows = assets.
///
/// `beta_i` is uniform on `[0.5, 1.5]` times `factor`; the noise scale is
/// `vol`. Returns are centered per row.
pub fn one_factor_market(n: usize, t: usize, factor: f64, vol: f64, nu: f64, seed: u64) -> Result<DataMatrix> {
    if nu <= 2.0 {
        return Err(Error::InvalidArgument("tail exponent must exceed 2".into()));
    }
    let draw = scaled_t(nu);
    let mut rng = stream_rng(seed, 0);
    let f: Vec<f64> = (0..t).map(|_| draw(&mut rng)).collect();
    let rows = (0..n)
        .map(|_| {
            let beta = factor * (0.5 + rng.gen::<f64>());
            f.iter().map(|ft| vol * (beta * ft + draw(&mut rng))).collect()
        })
        .collect();
    DataMatrix::from_rows(rows)?.center_rows()
}

/// Independent Gaussian panel, rows centered.
pub fn gaussian_panel(n: usize, t: usize, sigma: f64, seed: u64) -> Result<DataMatrix> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    let rows = (0..n).map(|_| (0..t).map(|_| normal.sample(&mut rng)).collect()).collect();
    DataMatrix::from_rows(rows)?.center_rows()
}

/// Panel whose rows share a seasonal cycle of `period` columns plus noise,
/// like temperatures from several cities.
pub fn seasonal_panel(n: usize, t: usize, period: usize, noise: f64, seed: u64) -> Result<DataMatrix> {
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    let rows = (0..n)
        .map(|_| {
            let amp = 1.0 + 0.5 * rng.gen::<f64>();
            (0..t)
                .map(|c| amp * (2.0 * std::f64::consts::PI * c as f64 / period as f64).sin() + normal.sample(&mut rng))
                .collect()
        })
        .collect();
    DataMatrix::from_rows(rows)?.center_rows()
}

/// I.i.d. normal returns.
pub fn gaussian_stream(t: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    Ok((0..t).map(|_| normal.sample(&mut rng)).collect())
}

/// Replaces a random fraction of the entries by `size`-fold multiples of
/// themselves.
pub fn inject_outliers(m: &DataMatrix, fraction: f64, size: f64, seed: u64) -> DataMatrix {
    let mut out = m.clone();
    let mut rng = stream_rng(seed, 1);
    for i in 0..m.n_rows() {
        for c in 0..m.n_cols() {
            if let Some(v) = m.get(i, c) {
                if rng.gen::<f64>() < fraction {
                    out.set(i, c, v * size);
                }
            }
        }
    }
    out
}
