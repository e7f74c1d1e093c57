//! Likelihood maximization over Lagrange multipliers, brute-force oracles
//! and the Gibbs entropy of calibrated models.

mod multivariate;
pub mod oracle;
mod solver;
mod univariate;

pub use multivariate::{calibrate_multivariate, initial_multipliers};
pub use univariate::{calibrate_series, calibrate_univariate, initial_params};

use crate::error::{Error, Result};
use crate::multivariate::EnsembleModel;
use crate::univariate::UnivariateModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Steepest ascent with backtracking.
    GradientAscent,
    /// Damped Newton on the full Hessian (block-eliminated for matrices).
    Newton,
    /// Diagonal Newton: each multiplier is moved by its own curvature only.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub tol_rel: f64,
    pub max_iter: usize,
    pub method: Method,
    /// Initial weight of the log-barrier on the rate sums; 0 disables the
    /// barrier stage.
    pub barrier_strength: f64,
    /// When set, the starting point is randomly perturbed with this seed.
    pub seed: Option<u64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-6,
            max_iter: 10_000,
            method: Method::Newton,
            barrier_strength: 0.0,
            seed: None,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_rel > 0.0) {
            return Err(Error::InvalidArgument("tol_rel must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if self.barrier_strength < 0.0 {
            return Err(Error::InvalidArgument("barrier_strength must be non-negative".into()));
        }
        Ok(())
    }
}

/// Target and model expectation of one constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    pub target: f64,
    pub expected: f64,
    pub rel_err: f64,
}

impl Residual {
    pub fn new(name: String, target: f64, expected: f64) -> Self {
        let rel_err = (expected - target).abs() / target.abs().max(1.0);
        Self { name, target, expected, rel_err }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub multipliers: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_rel_constraint_err: f64,
    pub final_log_likelihood: f64,
    pub dropped_constraints: Vec<String>,
    pub residuals: Vec<Residual>,
    /// Log-likelihood after each accepted iteration.
    pub history: Vec<f64>,
    pub method: Method,
    pub diagnostics: Vec<String>,
}

impl CalibrationResult {
    /// `Unconverged` when the solver stopped short of the tolerance.
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::Unconverged {
                iterations: self.iterations,
                max_rel_err: self.max_rel_constraint_err,
            })
        }
    }
}

/// Models with a Gibbs entropy at their calibration point.
pub trait GibbsEntropy {
    /// `ln Z + sum_l theta_l O_l` at the stored constraints.
    fn gibbs_entropy(&self) -> Result<f64>;
}

impl GibbsEntropy for UnivariateModel {
    fn gibbs_entropy(&self) -> Result<f64> {
        self.entropy()
    }
}

impl GibbsEntropy for EnsembleModel {
    fn gibbs_entropy(&self) -> Result<f64> {
        self.entropy()
    }
}

pub fn entropy(model: &dyn GibbsEntropy) -> Result<f64> {
    model.gibbs_entropy()
}
