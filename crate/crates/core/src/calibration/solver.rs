//! Damped ascent on a concave log-likelihood.

use super::{CalibrationOptions, Method};

pub(crate) trait Concave {
    /// `None` outside the admissible region.
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Largest relative constraint violation.
    fn residual(&self, x: &[f64]) -> f64;
    /// Solves `(-H) d = g`.
    fn newton_direction(&self, x: &[f64], g: &[f64]) -> Option<Vec<f64>>;
    /// Diagonal of `-H`.
    fn curvature(&self, x: &[f64]) -> Vec<f64>;
    /// Cheap preconditioned direction; diagonal scaling unless overridden.
    fn fixed_point_direction(&self, x: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        Some(self.curvature(x).iter().zip(g).map(|(h, gi)| if *h > 0.0 { gi / h } else { 0.0 }).collect())
    }
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub value: f64,
    pub history: Vec<f64>,
    pub notes: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backtracking search along `d`. Returns the accepted point and value.
fn line_search<P: Concave>(p: &P, x: &[f64], f: f64, g: &[f64], d: &[f64], t0: f64, r0: f64) -> Option<(Vec<f64>, f64, f64)> {
    let slope = dot(g, d);
    if !(slope > 0.0) {
        return None;
    }
    let noise = 1e-12 * (1.0 + f.abs());
    let mut t = t0;
    for _ in 0..60 {
        let xn: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        if let Some(fnew) = p.value(&xn) {
            if fnew >= f + 1e-4 * t * slope {
                return Some((xn, fnew, t));
            }
            // close to the optimum the gain drowns in rounding; accept
            // steps that keep the value and reduce the residual
            if fnew >= f - noise && p.residual(&xn) < r0 {
                return Some((xn, fnew.max(f), t));
            }
        }
        t *= 0.5;
    }
    None
}

pub(crate) fn maximize<P: Concave>(p: &P, x0: Vec<f64>, opts: &CalibrationOptions) -> Outcome {
    let mut x = x0;
    let mut f = p.value(&x).expect("starting point must be admissible");
    let mut history = vec![f];
    let mut notes = Vec::new();
    let mut grad_step = 1.0;
    let mut fell_back = false;
    let mut iterations = 0;
    let mut r = p.residual(&x);
    while iterations < opts.max_iter {
        if r <= opts.tol_rel {
            break;
        }
        iterations += 1;
        let g = p.gradient(&x);
        let mut accepted = None;
        if opts.method != Method::GradientAscent {
            let d = match opts.method {
                Method::Newton => p.newton_direction(&x, &g),
                _ => p.fixed_point_direction(&x, &g),
            };
            if let Some(d) = d {
                accepted = line_search(p, &x, f, &g, &d, 1.0, r);
            }
            if accepted.is_none() && !fell_back {
                notes.push(format!("iteration {iterations}: falling back to gradient ascent"));
                fell_back = true;
            }
        }
        if accepted.is_none() {
            // scale the raw gradient by the largest curvature so the first
            // trial step is of sensible size
            let hmax = p.curvature(&x).iter().cloned().fold(1e-300, f64::max);
            let d: Vec<f64> = g.iter().map(|gi| gi / hmax).collect();
            accepted = line_search(p, &x, f, &g, &d, grad_step, r);
            if let Some((_, _, t)) = accepted {
                grad_step = (t * 2.0).min(1e6);
            }
        }
        match accepted {
            Some((xn, fnew, _)) => {
                x = xn;
                f = fnew;
                history.push(f);
                r = p.residual(&x);
            }
            None => {
                notes.push(format!("iteration {iterations}: line search stalled"));
                break;
            }
        }
    }
    let converged = r <= opts.tol_rel;
    Outcome { x, converged, iterations, residual: r, value: f, history, notes }
}
