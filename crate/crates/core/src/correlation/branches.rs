use serde::Serialize;

use super::theory::{CorrelationTheory, Observation};
use crate::error::{Error, Result};
use crate::noise::{covariance_kernel, Multiplier, NoiseSpec};
use crate::propagation::{DampedWaveModel, Mat2, Variant};

#[derive(Debug, Clone, Serialize)]
pub struct BranchReport {
    pub epsilon: f64,
    /// Distance from B to the source window support; 0 when B is covered.
    pub clearance: f64,
    /// Set when the window reaches B, so no suppression is expected.
    pub control: bool,
    pub max_cross: f64,
    pub max_diagonal: f64,
    /// `max ‖C^{+,-}‖ / max ‖C^{+,+}‖` over the lag grid (Frobenius norms).
    pub ratio: f64,
}

fn frobenius(m: &Mat2) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn multiplier_reach(m: &Multiplier) -> f64 {
    match m {
        Multiplier::One => 0.0,
        Multiplier::Indicator { hi, .. } => *hi,
        Multiplier::Bump { center, half_width } => center + half_width,
        Multiplier::Table { xi, .. } => xi.last().copied().unwrap_or(0.0),
    }
}

/// Branch-resolved correlation between the `+` branch at A and the `-`
/// branch at B, relative to the `+,+` correlation, from the exact branch
/// projectors of the two-component model.
pub fn cross_branch_correlation(
    model: &DampedWaveModel,
    spec: &NoiseSpec,
    a_pt: &[f64],
    b_pt: &[f64],
    lags: &[f64],
) -> Result<BranchReport> {
    if !matches!(model.spec.variant, Variant::TwoComponent { .. }) {
        return Err(Error::Unsupported("branch correlations need the two-component model".into()));
    }
    let dom = &spec.domain;
    let eps = spec.epsilon;
    let clearance = spec.window.clearance(dom, b_pt);
    let control = clearance == 0.0;
    if !control {
        if clearance < 4.0 * eps {
            return Err(Error::InvalidArgument(format!(
                "window clears B by {clearance:.4}, less than 4ε = {:.4}",
                4.0 * eps
            )));
        }
        let h = (0..dom.dim()).map(|a| dom.spacing(a)).fold(0.0, f64::max);
        if clearance < 2.0 * h {
            return Err(Error::UnderResolved(format!("clearance {clearance:.4} spans under two cells")));
        }
    }
    let dec = model.decomposition();
    let k_max = (0..dec.len())
        .filter_map(|k| dec.wave_number(k))
        .map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if eps * k_max < multiplier_reach(&spec.multiplier) {
        return Err(Error::UnderResolved(format!(
            "multiplier reaches ξ = {} but the grid stops at {}",
            multiplier_reach(&spec.multiplier),
            eps * k_max
        )));
    }
    let kernel = covariance_kernel(dec, spec)?;
    let theory = CorrelationTheory::new(model, &kernel)?;
    let diag = theory.station_kernel(a_pt, b_pt, Observation::Branch(0, 0))?;
    let cross = theory.station_kernel(a_pt, b_pt, Observation::Branch(0, 1))?;
    let mut max_cross = 0.0f64;
    let mut max_diagonal = 0.0f64;
    for &t in lags {
        max_cross = max_cross.max(frobenius(&cross.eval(t)));
        max_diagonal = max_diagonal.max(frobenius(&diag.eval(t)));
    }
    if max_diagonal == 0.0 {
        return Err(Error::Degenerate("the + branch carries no correlation".into()));
    }
    Ok(BranchReport { epsilon: eps, clearance, control, max_cross, max_diagonal, ratio: max_cross / max_diagonal })
}
