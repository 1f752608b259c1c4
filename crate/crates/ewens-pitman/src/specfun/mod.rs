//! Special functions with explicit accuracy contracts.
//!
//! Everything downstream (exact moments, limit covariances, the audit)
//! reduces to a handful of primitives: log-gamma, gamma ratios, polygamma
//! functions and their differences, a Gauss hypergeometric evaluator in
//! the only parameter family the covariance formulas need, and adaptive
//! quadrature. Each primitive documents its domain and the error level it
//! is tested to; callers rely on those numbers.
//!
//! Accuracy targets, budgets, and quadrature depth all come from one
//! [`AccuracyPolicy`] value so experiments can tighten or relax the whole
//! stack coherently.

mod combinatorial;
mod gamma;
mod hypergeom;
mod polygamma;
mod quad;

pub use combinatorial::{falling_factorial, stirling2};
pub use gamma::{
    gamma_ratio, gamma_ratio_asymptotic, log_gamma, log_rising_factorial, rising_factorial,
};
pub use hypergeom::hypergeom_h;
pub use polygamma::{polygamma, polygamma_diff, polygamma_diff_int};
pub use quad::integrate;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shared numerical budget: tolerances, series length, quadrature depth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AccuracyPolicy {
    /// Absolute tolerance for quadrature and series tails.
    pub abs_tol: f64,
    /// Relative tolerance for series convergence checks.
    pub rel_tol: f64,
    /// Hard cap on series terms before giving up.
    pub max_series_terms: usize,
    /// Maximum bisection depth for adaptive quadrature.
    pub quadrature_max_depth: usize,
}

impl Default for AccuracyPolicy {
    fn default() -> Self {
        AccuracyPolicy {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_series_terms: 10_000,
            quadrature_max_depth: 40,
        }
    }
}

impl AccuracyPolicy {
    /// Check that every bound is strictly positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!(
                "tolerances must be positive (abs_tol={}, rel_tol={})",
                self.abs_tol, self.rel_tol
            )));
        }
        if self.max_series_terms == 0 || self.quadrature_max_depth == 0 {
            return Err(Error::Config(
                "series and depth budgets must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_validates() {
        AccuracyPolicy::default().validate().unwrap();
    }

    #[test]
    fn zero_budget_rejected() {
        let p = AccuracyPolicy {
            max_series_terms: 0,
            ..AccuracyPolicy::default()
        };
        assert!(p.validate().is_err());
        let p = AccuracyPolicy {
            abs_tol: 0.0,
            ..AccuracyPolicy::default()
        };
        assert!(p.validate().is_err());
    }
}
