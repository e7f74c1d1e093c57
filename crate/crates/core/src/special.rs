//! Log-space normal tail functions and their inverses.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn ln_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    ln_normal_pdf(x).exp()
}

/// `ln Phi(x)` for the standard normal, accurate far into the left tail.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x > -30.0 {
        let v = 0.5 * erfc(-x * FRAC_1_SQRT_2);
        if x > 5.0 {
            // Phi close to one
            return (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p();
        }
        return v.ln();
    }
    // asymptotic Mills-ratio series
    let z2 = 1.0 / (x * x);
    let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2 + 105.0 * z2.powi(4);
    -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// `ln(1 - Phi(x))`.
#[inline]
pub fn ln_normal_sf(x: f64) -> f64 {
    ln_normal_cdf(-x)
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
#[inline]
pub fn ln_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(Phi(b) - Phi(a))` for `a <= b`, stable in both tails.
pub fn ln_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        ln_diff_exp(ln_normal_sf(a), ln_normal_sf(b))
    } else if b <= 0.0 {
        ln_diff_exp(ln_normal_cdf(b), ln_normal_cdf(a))
    } else {
        let outside = ln_normal_cdf(a).exp() + ln_normal_sf(b).exp();
        (-outside).ln_1p()
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < 0.5 {
        normal_cdf_inv_ln(p.ln())
    } else {
        normal_sf_inv_ln((1.0 - p).ln())
    }
}

/// Solves `ln(1 - Phi(x)) = ln_q` for `x`.
pub fn normal_sf_inv_ln(ln_q: f64) -> f64 {
    if ln_q >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if ln_q == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    if ln_q > -std::f64::consts::LN_2 {
        // upper half: solve for the complementary lower tail instead
        return -normal_sf_inv_ln((-ln_q.exp_m1()).ln());
    }
    let mut x = if ln_q > -700.0 {
        SQRT_2 * erfc_inv(2.0 * ln_q.exp())
    } else {
        (-2.0 * ln_q).sqrt()
    };
    // Newton polish on the log survival function
    for _ in 0..50 {
        let f = ln_normal_sf(x) - ln_q;
        let slope = -(ln_normal_pdf(x) - ln_normal_sf(x)).exp();
        if !slope.is_finite() || slope == 0.0 {
            break;
        }
        let step = f / slope;
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Solves `ln Phi(x) = ln_p` for `x`.
#[inline]
pub fn normal_cdf_inv_ln(ln_p: f64) -> f64 {
    -normal_sf_inv_ln(ln_p)
}

/// `(1 - exp(-x)) / x`, the normalized integral of `exp(-x u)` over `[0, 1]`.
pub fn one_minus_exp_over(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `sqrt(2 pi)`.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_matches_reference_points() {
        assert!((ln_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        // Phi(-1.959963984540054) = 0.025
        assert!((ln_normal_cdf(-1.959_963_984_540_054).exp() - 0.025).abs() < 1e-14);
        // deep tail, reference from 40-digit arithmetic
        assert!((ln_normal_cdf(-40.0) + 804.608_442_013_753_8).abs() < 1e-9);
    }

    #[test]
    fn mass_handles_tails() {
        let m = ln_normal_mass(8.0, 9.0).exp();
        let reference = 6.220_960_574_271_78e-16 - 1.128_588_405_953_840_8e-19;
        assert!((m - reference).abs() / reference < 1e-10);
        assert!((ln_normal_mass(f64::NEG_INFINITY, f64::INFINITY)).abs() < 1e-15);
    }

    #[test]
    fn inverse_round_trips() {
        for &x in &[-30.0, -8.0, -1.0, 0.0, 0.5, 3.0, 12.0, 45.0] {
            let back = normal_sf_inv_ln(ln_normal_sf(x));
            assert!((back - x).abs() < 1e-9 * (1.0 + x.abs()), "{x} -> {back}");
        }
        assert!((normal_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
    }

    #[test]
    fn small_argument_series_is_continuous() {
        let a = one_minus_exp_over(0.99e-4);
        let b = one_minus_exp_over(1.01e-4);
        assert!((a - b).abs() < 1e-5);
        assert!((one_minus_exp_over(0.0) - 1.0).abs() < 1e-15);
    }
}
