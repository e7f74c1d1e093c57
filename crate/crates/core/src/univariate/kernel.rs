//! A single bin of a univariate ensemble: the density proportional to
//! `exp(-c1 x - c2 x^2)` restricted to `[lo, hi]`.
//!
//! `c2 > 0` gives a truncated Gaussian, `c2 == 0` a truncated exponential
//! (uniform when `c1 == 0` as well).

use crate::error::{Error, Result};
use crate::special::{
    ln_normal_cdf, ln_normal_mass, ln_normal_pdf, ln_normal_sf, normal_cdf_inv_ln,
    normal_quantile, normal_sf_inv_ln, one_minus_exp_over, LN_SQRT_2PI,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinKernel {
    pub lo: f64,
    pub hi: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Standardized truncated-normal view of a Gaussian kernel.
struct Gauss {
    mu: f64,
    s: f64,
    a: f64,
    b: f64,
    ln_mass: f64,
}

/// Truncated-exponential view: `x = pivot + dir * u`, `u ~ Exp(kappa)` on `[0, len]`.
struct Expo {
    pivot: f64,
    dir: f64,
    kappa: f64,
    len: f64,
}

impl BinKernel {
    pub fn new(lo: f64, hi: f64, c1: f64, c2: f64) -> Self {
        Self { lo, hi, c1, c2 }
    }

    /// True when the bin integral is finite.
    pub fn is_admissible(&self) -> bool {
        self.check().is_ok()
    }

    fn check(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(Error::DivergentPartition(format!(
                "bin [{}, {}] with c1={} c2={}",
                self.lo, self.hi, self.c1, self.c2
            )));
        }
        if self.c2 > 0.0 {
            return Ok(());
        }
        if self.c2 < 0.0 && (self.lo.is_infinite() || self.hi.is_infinite()) {
            return Err(Error::DivergentPartition("negative quadratic term on unbounded bin".into()));
        }
        if self.c2 < 0.0 {
            return Err(Error::InvalidArgument("negative quadratic term is not supported".into()));
        }
        match (self.lo.is_infinite(), self.hi.is_infinite()) {
            (false, false) => Ok(()),
            (true, true) => Err(Error::DivergentPartition("unbounded bin without quadratic term".into())),
            (false, true) if self.c1 > 0.0 => Ok(()),
            (true, false) if self.c1 < 0.0 => Ok(()),
            _ => Err(Error::DivergentPartition(format!(
                "linear coefficient {} has the wrong sign for the unbounded bin [{}, {}]",
                self.c1, self.lo, self.hi
            ))),
        }
    }

    fn gauss(&self) -> Gauss {
        let mu = -self.c1 / (2.0 * self.c2);
        let s = 1.0 / (2.0 * self.c2).sqrt();
        let a = (self.lo - mu) / s;
        let b = (self.hi - mu) / s;
        Gauss { mu, s, a, b, ln_mass: ln_normal_mass(a, b) }
    }

    fn expo(&self) -> Expo {
        let len = self.hi - self.lo;
        if self.c1 >= 0.0 && self.lo.is_finite() {
            Expo { pivot: self.lo, dir: 1.0, kappa: self.c1, len }
        } else {
            Expo { pivot: self.hi, dir: -1.0, kappa: -self.c1, len }
        }
    }

    /// `ln of the integral of exp(-c1 x - c2 x^2)` over the bin.
    pub fn ln_integral(&self) -> Result<f64> {
        self.check()?;
        if self.c2 > 0.0 {
            let g = self.gauss();
            Ok(self.c1 * self.c1 / (4.0 * self.c2) + g.s.ln() + LN_SQRT_2PI + g.ln_mass)
        } else {
            let e = self.expo();
            let ln_u = if e.len.is_infinite() {
                -e.kappa.ln()
            } else {
                e.len.ln() + one_minus_exp_over(e.kappa * e.len).ln()
            };
            Ok(-self.c1 * e.pivot + ln_u)
        }
    }

    /// Conditional raw moments `E[x^k | bin]` for `k = 0..=4`.
    pub fn raw_moments(&self) -> [f64; 5] {
        if self.c2 > 0.0 {
            let g = self.gauss();
            let ratio = |z: f64| {
                if z.is_infinite() {
                    (0.0, 0.0)
                } else {
                    ((ln_normal_pdf(z) - g.ln_mass).exp(), z)
                }
            };
            let (ra, za) = ratio(g.a);
            let (rb, zb) = ratio(g.b);
            let mut m = [0.0; 5];
            m[0] = 1.0;
            m[1] = ra - rb;
            for k in 2..5 {
                let pw = (k - 1) as i32;
                let ta = if ra == 0.0 { 0.0 } else { za.powi(pw) * ra };
                let tb = if rb == 0.0 { 0.0 } else { zb.powi(pw) * rb };
                m[k] = (k - 1) as f64 * m[k - 2] + ta - tb;
            }
            shift_moments(&m, g.mu, g.s)
        } else {
            let e = self.expo();
            let mu = exp_moments(e.kappa, e.len);
            shift_moments(&mu, e.pivot, e.dir)
        }
    }

    /// Conditional CDF within the bin.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        if self.c2 > 0.0 {
            let g = self.gauss();
            let z = (x - g.mu) / g.s;
            (ln_normal_mass(g.a, z) - g.ln_mass).exp().clamp(0.0, 1.0)
        } else {
            let e = self.expo();
            let u = e.dir * (x - e.pivot);
            let f = exp_cdf(e.kappa, e.len, u);
            if e.dir > 0.0 {
                f
            } else {
                1.0 - f
            }
        }
    }

    /// Inverse of [`BinKernel::cdf`].
    pub fn quantile(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let x = if self.c2 > 0.0 {
            let g = self.gauss();
            let z = if g.a >= 0.0 {
                let lsa = ln_normal_sf(g.a);
                let lsb = ln_normal_sf(g.b);
                let keep = -(lsb - lsa).exp_m1();
                normal_sf_inv_ln(lsa + (-v * keep).ln_1p())
            } else if g.b <= 0.0 {
                let lca = ln_normal_cdf(g.a);
                let lcb = ln_normal_cdf(g.b);
                let frac = (lca - lcb).exp();
                normal_cdf_inv_ln(lcb + (frac + v * (1.0 - frac)).ln())
            } else {
                let pa = ln_normal_cdf(g.a).exp();
                normal_quantile(pa + v * g.ln_mass.exp())
            };
            g.mu + g.s * z
        } else {
            let e = self.expo();
            let w = if e.dir > 0.0 { v } else { 1.0 - v };
            e.pivot + e.dir * exp_quantile(e.kappa, e.len, w)
        };
        x.clamp(self.lo, self.hi)
    }

    /// Conditional log density at `x` (must lie in the bin).
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        Ok(-self.c1 * x - self.c2 * x * x - self.ln_integral()?)
    }
}

/// Moments of `pivot + dir * u` from the moments of `u`.
fn shift_moments(mu: &[f64; 5], pivot: f64, dir: f64) -> [f64; 5] {
    const BINOM: [[f64; 5]; 5] = [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0, 0.0],
        [1.0, 3.0, 3.0, 1.0, 0.0],
        [1.0, 4.0, 6.0, 4.0, 1.0],
    ];
    let mut out = [0.0; 5];
    for k in 0..5 {
        let mut acc = 0.0;
        for j in 0..=k {
            acc += BINOM[k][j] * pivot.powi((k - j) as i32) * dir.powi(j as i32) * mu[j];
        }
        out[k] = acc;
    }
    out
}

/// `E[u^k]` for `u` with density proportional to `exp(-kappa u)` on `[0, len]`.
fn exp_moments(kappa: f64, len: f64) -> [f64; 5] {
    const FACT: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];
    let mut m = [1.0; 5];
    if len.is_infinite() {
        for k in 1..5 {
            m[k] = FACT[k] / kappa.powi(k as i32);
        }
        return m;
    }
    let x = kappa * len;
    if x <= 1.0 {
        // E[u^k] / len^k = A_k / A_0, A_k = sum_n (-x)^n / (n! (k + n + 1))
        let a = |k: usize| {
            let mut term = 1.0;
            let mut acc = 0.0;
            for n in 0..40 {
                if n > 0 {
                    term *= -x / n as f64;
                }
                acc += term / (k + n + 1) as f64;
                if term.abs() < 1e-18 {
                    break;
                }
            }
            acc
        };
        let a0 = a(0);
        for k in 1..5 {
            m[k] = len.powi(k as i32) * a(k) / a0;
        }
    } else {
        // lower regularized incomplete gamma P(k + 1, x)
        let p = |k: usize| {
            let mut term = 1.0;
            let mut s = 1.0;
            for j in 1..=k {
                term *= x / j as f64;
                s += term;
            }
            1.0 - (-x).exp() * s
        };
        let p0 = p(0);
        for k in 1..5 {
            m[k] = FACT[k] / kappa.powi(k as i32) * p(k) / p0;
        }
    }
    m
}

fn exp_cdf(kappa: f64, len: f64, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if len.is_infinite() {
        return -(-kappa * u).exp_m1();
    }
    if u >= len {
        return 1.0;
    }
    if kappa * len < 1e-12 {
        return u / len;
    }
    ((-kappa * u).exp_m1() / (-kappa * len).exp_m1()).clamp(0.0, 1.0)
}

fn exp_quantile(kappa: f64, len: f64, w: f64) -> f64 {
    if len.is_infinite() {
        return -(-w).ln_1p() / kappa;
    }
    if kappa * len < 1e-12 {
        return w * len;
    }
    -(w * (-kappa * len).exp_m1()).ln_1p() / kappa
}
