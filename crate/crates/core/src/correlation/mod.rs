//! Station-pair correlations: empirical time averages, the operator
//! formulas for stationary covariance, closed forms, travel-time picking,
//! ergodic convergence and branch-resolved correlations.

mod branches;
mod closed_form;
mod empirical;
mod ergodic;
mod picking;
mod theory;

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use branches::{cross_branch_correlation, BranchReport};
pub use closed_form::{
    closed_form_derivative, derivative_green_identity, exact_scalar_formula, greens_function_nonzero,
    white_noise_closed_form, GreenIdentityReport,
};
pub use empirical::{empirical_correlation, ensemble_correlation, mean_with_sigma, EnsembleSetup};
pub use ergodic::{ergodic_convergence, ErgodicReport, ErgodicSetup};
pub use picking::{filtered_derivative, pick_travel_time, Pick, PickOptions};
pub use theory::{theoretical_correlation, CorrelationTheory, Observation, StationKernel};

/// Station pair with the recorded component at each end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    #[serde(default)]
    pub ca: usize,
    #[serde(default)]
    pub cb: usize,
}

impl Pair {
    pub fn new(a: usize, b: usize) -> Self {
        Self { a, b, ca: 0, cb: 0 }
    }

    pub fn components(a: usize, b: usize, ca: usize, cb: usize) -> Self {
        Self { a, b, ca, cb }
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a, ca: self.cb, cb: self.ca }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    Empirical { duration: f64, realizations: usize },
    TheoreticalQuadrature,
    ClosedForm,
}

/// `C_{A,B}(τ) = E[u(A, τ) conj(u(B, 0))]` on a uniform symmetric lag grid.
#[derive(Debug, Clone)]
pub struct CorrelationFunction {
    pub lags: Vec<f64>,
    pub stations: Vec<Vec<f64>>,
    pub pairs: Vec<Pair>,
    /// `values[pair][lag]`.
    pub values: Vec<Vec<Complex64>>,
    /// Monte Carlo standard error per pair and lag, when available.
    pub sigma: Option<Vec<Vec<f64>>>,
    pub provenance: Provenance,
}

impl CorrelationFunction {
    pub fn lag_step(&self) -> f64 {
        if self.lags.len() > 1 {
            self.lags[1] - self.lags[0]
        } else {
            0.0
        }
    }

    /// Index of lag zero.
    pub fn zero_index(&self) -> usize {
        self.lags.len() / 2
    }

    pub fn pair_index(&self, pair: Pair) -> Option<usize> {
        self.pairs.iter().position(|p| *p == pair)
    }

    /// Writes `pair_id,tau,re,im,sigma`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "pair_id,tau,re,im,sigma")?;
        for (p, vals) in self.values.iter().enumerate() {
            for (l, v) in vals.iter().enumerate() {
                let s = self.sigma.as_ref().map(|s| s[p][l]).unwrap_or(f64::NAN);
                writeln!(out, "{p},{:.12e},{:.12e},{:.12e},{:.6e}", self.lags[l], v.re, v.im, s)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Symmetric lag grid `τ_m = m·step`, `m = -max..=max`.
pub fn symmetric_lags(step: f64, max: usize) -> Vec<f64> {
    (-(max as i64)..=max as i64).map(|m| m as f64 * step).collect()
}

/// Outcome of a numerical identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub test: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(test: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self { test: test.into(), residual, tolerance, pass: residual.is_finite() && residual <= tolerance }
    }
}

pub fn write_reports(path: &Path, reports: &[CheckReport]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(reports)?)?;
    Ok(())
}
