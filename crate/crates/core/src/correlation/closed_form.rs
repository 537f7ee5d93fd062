use num_complex::Complex64;
use serde::Serialize;

use super::CheckReport;
use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, SpatialFilter, Window};
use crate::propagation::{DampedWaveModel, Damping, Variant};
use crate::spectral::wave_kernels;
use crate::util::linear_fit;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn second_order_damping(model: &DampedWaveModel) -> Result<f64> {
    match &model.spec.variant {
        Variant::SecondOrder { damping: Damping::Constant(a) } if *a > 0.0 => Ok(*a),
        _ => Err(Error::Unsupported("closed form needs the second-order model with constant a > 0".into())),
    }
}

fn station_products(model: &DampedWaveModel, a_pt: &[f64], b_pt: &[f64]) -> Result<Vec<Complex64>> {
    let dec = model.decomposition();
    let ea = dec.evaluate_modes(a_pt)?;
    let eb = dec.evaluate_modes(b_pt)?;
    Ok(ea.iter().zip(&eb).map(|(x, y)| x * y.conj()).collect())
}

/// White-noise correlation of the damped wave equation,
/// `e^{-a|τ|}/(4a) [(Q² + a²)^{-1}(cos τQ + a sin|τ|Q / Q)](A, B)`
/// with `Q² = -Δ - a²`. The `μ = 0` mode carries no stationary variance
/// and is left out.
pub fn white_noise_closed_form(model: &DampedWaveModel, tau: f64, a_pt: &[f64], b_pt: &[f64]) -> Result<Complex64> {
    let a = second_order_damping(model)?;
    let prod = station_products(model, a_pt, b_pt)?;
    let t = tau.abs();
    let mut acc = ZERO;
    for (k, &mu) in model.decomposition().eigenvalues().iter().enumerate() {
        if model.is_excluded_mode(k) {
            continue;
        }
        let (c, s) = wave_kernels(mu - a * a, t).damped(a, t);
        acc += prod[k] * ((c + a * s) / (4.0 * a * mu));
    }
    Ok(acc)
}

/// Exact `τ` derivative of [`white_noise_closed_form`], by the product rule
/// on each mode term.
pub fn closed_form_derivative(model: &DampedWaveModel, tau: f64, a_pt: &[f64], b_pt: &[f64]) -> Result<Complex64> {
    let a = second_order_damping(model)?;
    let prod = station_products(model, a_pt, b_pt)?;
    let t = tau.abs();
    let sign = if tau < 0.0 { -1.0 } else { 1.0 };
    let mut acc = ZERO;
    for (k, &mu) in model.decomposition().eigenvalues().iter().enumerate() {
        if model.is_excluded_mode(k) {
            continue;
        }
        let q2 = mu - a * a;
        let (c, s) = wave_kernels(q2, t).damped(a, t);
        // d/dt cos(tQ) = -Q² sin(tQ)/Q, d/dt sin(tQ)/Q = cos(tQ).
        let dc = -q2 * s;
        let ds = c;
        let d = -a * (c + a * s) + dc + a * ds;
        acc += prod[k] * (sign * d / (4.0 * a * mu));
    }
    Ok(acc)
}

/// `G_a(t, A, B)` over the modes with `μ > 0`, read off the mode propagators.
pub fn greens_function_nonzero(model: &DampedWaveModel, t: f64, a_pt: &[f64], b_pt: &[f64]) -> Result<Complex64> {
    second_order_damping(model)?;
    if t <= 0.0 {
        return Ok(ZERO);
    }
    let prod = station_products(model, a_pt, b_pt)?;
    Ok((0..prod.len())
        .filter(|&k| !model.is_excluded_mode(k))
        .map(|k| prod[k] * model.mode_propagator(k, t)[1])
        .sum())
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenIdentityReport {
    /// `max |C'(τ) + sgn(τ) G_a(|τ|)/(4a)|` with the exact derivative.
    pub exact_residual: f64,
    /// `(h, max residual)` of the central difference.
    pub differences: Vec<(f64, f64)>,
    /// Fitted slope of log residual against log h.
    pub order: f64,
    pub checks: Vec<CheckReport>,
}

/// Checks `dC/dτ = -(1/4a) G_a(τ)` for `τ > 0` and `+(1/4a) G_a(-τ)` for
/// `τ < 0`, exactly and with central differences at each step in `steps`.
pub fn derivative_green_identity(
    model: &DampedWaveModel,
    taus: &[f64],
    a_pt: &[f64],
    b_pt: &[f64],
    steps: &[f64],
) -> Result<GreenIdentityReport> {
    let a = second_order_damping(model)?;
    if taus.iter().any(|t| *t == 0.0 || !t.is_finite()) {
        return Err(Error::InvalidArgument("identity lags must be nonzero".into()));
    }
    let target = |tau: f64| -> Result<Complex64> {
        let g = greens_function_nonzero(model, tau.abs(), a_pt, b_pt)?;
        Ok(g * (-tau.signum() / (4.0 * a)))
    };
    let mut scale = 0.0f64;
    let mut exact = 0.0f64;
    for &tau in taus {
        let t = target(tau)?;
        scale = scale.max(t.norm());
        exact = exact.max((closed_form_derivative(model, tau, a_pt, b_pt)? - t).norm());
    }
    let mut differences = Vec::with_capacity(steps.len());
    for &h in steps {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("difference step must be positive".into()));
        }
        let mut worst = 0.0f64;
        for &tau in taus {
            if tau.abs() <= h {
                continue;
            }
            let fd = (white_noise_closed_form(model, tau + h, a_pt, b_pt)?
                - white_noise_closed_form(model, tau - h, a_pt, b_pt)?)
                / (2.0 * h);
            worst = worst.max((fd - target(tau)?).norm());
        }
        differences.push((h, worst));
    }
    let order = if differences.len() >= 2 {
        let x: Vec<f64> = differences.iter().map(|d| d.0.ln()).collect();
        let y: Vec<f64> = differences.iter().map(|d| d.1.ln()).collect();
        linear_fit(&x, &y).1
    } else {
        f64::NAN
    };
    let scale = scale.max(f64::MIN_POSITIVE);
    let checks = vec![
        CheckReport::new("derivative_green_exact", exact / scale, 1e-10),
        CheckReport::new("derivative_green_fd_order", (2.0 - order).max(0.0), 0.1),
    ];
    Ok(GreenIdentityReport { exact_residual: exact / scale, differences, order, checks })
}

/// Correlation of the first-order scalar model for `τ > t₀`:
/// `C(τ) = (1/2k) F(Ĥ₀/ε) Ω(τ)`, with `F(ω) = χ(ω) Σ_m dt Ψ_m e^{k u_m} e^{iω u_m}`
/// the discrete Fourier transform of `Ψ(t) e^{kt}` at `-ω`.
pub fn exact_scalar_formula(
    model: &DampedWaveModel,
    spec: &NoiseSpec,
    tau: f64,
    a_pt: &[f64],
    b_pt: &[f64],
) -> Result<Complex64> {
    let k = match &model.spec.variant {
        Variant::FirstOrderScalar { damping, .. } if *damping > 0.0 => *damping,
        _ => return Err(Error::Unsupported("scalar formula needs the first-order model with k > 0".into())),
    };
    if spec.window != Window::None {
        return Err(Error::Unsupported("scalar formula needs a source that commutes with the dynamics".into()));
    }
    let t0 = spec.support();
    if tau <= t0 {
        return Err(Error::LagInsideSupport { tau, t0 });
    }
    let dec = model.decomposition();
    let filter = SpatialFilter::new(dec, spec)?;
    let psi = spec.autocorrelation();
    let prod = station_products(model, a_pt, b_pt)?;
    let mut acc = ZERO;
    for (mode, p) in prod.iter().enumerate() {
        let chi = filter.gain[mode] * filter.gain[mode];
        if chi == 0.0 {
            continue;
        }
        let omega = model.dispersion()[mode] / model.spec.epsilon;
        let mut f = ZERO;
        for m in 1 - psi.len() as i64..psi.len() as i64 {
            let u = m as f64 * spec.dt;
            f += Complex64::from_polar(spec.dt * psi[m.unsigned_abs() as usize] * (k * u).exp(), omega * u);
        }
        let omega_tau = model.mode_propagator(mode, tau)[0];
        acc += p * f * omega_tau * (chi / (2.0 * k));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{covariance_kernel, Band};
    use crate::correlation::theory::CorrelationTheory;
    use crate::correlation::Observation;
    use crate::propagation::ModelSpec;
    use crate::spectral::DiscreteDomain;

    fn wave(n: usize, a: f64) -> DampedWaveModel {
        DampedWaveModel::new(ModelSpec {
            domain: DiscreteDomain::circle(n).unwrap(),
            variant: Variant::SecondOrder { damping: Damping::Constant(a) },
            epsilon: 1.0,
        })
        .unwrap()
    }

    fn scalar(n: usize, k: f64) -> DampedWaveModel {
        DampedWaveModel::new(ModelSpec {
            domain: DiscreteDomain::circle(n).unwrap(),
            variant: Variant::FirstOrderScalar { dispersion: vec![0.3, 1.0, 0.25], damping: k },
            epsilon: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn single_mode_value_at_zero_lag() {
        let m = wave(3, 0.5);
        let dec = m.decomposition();
        let x = [0.4];
        let y = [1.9];
        let e_a = dec.evaluate_modes(&x).unwrap();
        let e_b = dec.evaluate_modes(&y).unwrap();
        let expect: Complex64 = (1..3).map(|k| e_a[k] * e_b[k].conj() / (4.0 * 0.5 * 1.0)).sum();
        let got = white_noise_closed_form(&m, 0.0, &x, &y).unwrap();
        assert!((got - expect).norm() < 1e-14);
    }

    #[test]
    fn closed_form_is_even() {
        let m = wave(9, 0.5);
        for &t in &[0.1, 0.7, 2.3, 9.0] {
            let p = white_noise_closed_form(&m, t, &[0.2], &[1.1]).unwrap();
            let q = white_noise_closed_form(&m, -t, &[0.2], &[1.1]).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn exact_derivative_of_one_mode_matches_symbolic() {
        // μ = 1, a = 0.5, e(A) conj e(B) = 1/(2π): C = e^{-aτ}(cos qτ + a sin qτ/q)/(4a·2π).
        let m = wave(3, 0.5);
        let a: f64 = 0.5;
        let q = (1.0 - a * a).sqrt();
        let tau: f64 = 1.3;
        let d = (-a * tau).exp() * (-(q * q + a * a) * (q * tau).sin() / q) / (4.0 * a);
        // The two μ = 1 modes are e^{±ix}/√(2π); at A = B the product is 1/π.
        let got = closed_form_derivative(&m, tau, &[0.0], &[0.0]).unwrap();
        assert!((got.re - d / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn green_identity_holds() {
        let m = wave(33, 0.5);
        let taus: Vec<f64> = (1..40).map(|i| i as f64 * 0.1 - 2.05).collect();
        let rep = derivative_green_identity(&m, &taus, &[0.3], &[1.7], &[0.02, 0.01, 0.005]).unwrap();
        assert!(rep.exact_residual < 1e-10, "{}", rep.exact_residual);
        assert!(rep.order > 1.9, "{}", rep.order);
        let ratio = rep.differences[0].1 / rep.differences[1].1;
        assert!((ratio - 4.0).abs() < 0.8, "{ratio}");
    }

    #[test]
    fn white_taps_give_half_green_function() {
        let m = scalar(9, 0.7);
        let spec = NoiseSpec::white(m.spec.domain.clone(), 0.05, 0);
        for &tau in &[0.2, 1.0, 3.3] {
            let got = exact_scalar_formula(&m, &spec, tau, &[0.5], &[2.0]).unwrap();
            let dec = m.decomposition();
            let ea = dec.evaluate_modes(&[0.5]).unwrap();
            let eb = dec.evaluate_modes(&[2.0]).unwrap();
            let g: Complex64 = (0..9).map(|k| ea[k] * eb[k].conj() * m.mode_propagator(k, tau)[0]).sum();
            assert!((got - g / 1.4).norm() < 1e-13);
        }
    }

    #[test]
    fn empty_band_gives_zero_and_short_lags_are_rejected() {
        let m = scalar(9, 0.7);
        let mut spec = NoiseSpec::white(m.spec.domain.clone(), 0.05, 0);
        spec.band = Band::Interval { lo: 1.2, hi: 1.8 };
        assert_eq!(exact_scalar_formula(&m, &spec, 1.0, &[0.5], &[2.0]).unwrap(), ZERO);
        spec.taps = vec![3.0, 1.0, -0.5, 0.25];
        assert!(matches!(
            exact_scalar_formula(&m, &spec, 0.2, &[0.5], &[2.0]),
            Err(Error::LagInsideSupport { .. })
        ));
    }

    #[test]
    fn scalar_formula_matches_operator_theory() {
        let m = scalar(9, 0.6);
        let mut spec = NoiseSpec::white(m.spec.domain.clone(), 0.05, 0);
        spec.taps = vec![4.0, -2.0, 1.0];
        spec.band = Band::Interval { lo: 0.5, hi: 3.5 };
        let kern = covariance_kernel(m.decomposition(), &spec).unwrap();
        let th = CorrelationTheory::new(&m, &kern).unwrap();
        let sk = th.station_kernel(&[0.5], &[2.0], Observation::Components).unwrap();
        for &tau in &[0.2, 0.9, 2.5] {
            let a = exact_scalar_formula(&m, &spec, tau, &[0.5], &[2.0]).unwrap();
            let b = sk.eval(tau)[0];
            assert!((a - b).norm() < 1e-10 * (1.0 + b.norm()), "{a} {b}");
        }
    }
}
