use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{CorrelationFunction, Pair};
use crate::error::{Error, Result};

/// Arrival picking on `d^n/dτ^n C` after zero-phase band-pass smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickOptions {
    /// Order of the lag derivative.
    pub derivative_order: u32,
    /// Pass band in angular frequency; `None` keeps everything.
    pub band: Option<(f64, f64)>,
    /// Width of the raised-cosine roll-off at each band edge.
    pub rolloff: f64,
    /// Lags below this are not searched.
    pub min_lag: f64,
    /// Fraction of each end of the lag series that is tapered.
    pub taper: f64,
    pub snr_threshold: f64,
}

impl Default for PickOptions {
    fn default() -> Self {
        Self { derivative_order: 2, band: None, rolloff: 0.5, min_lag: 0.0, taper: 0.1, snr_threshold: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub tau: f64,
    pub amplitude: f64,
    pub snr: f64,
}

fn band_gain(w: f64, band: Option<(f64, f64)>, roll: f64) -> f64 {
    let Some((lo, hi)) = band else { return 1.0 };
    let w = w.abs();
    let edge = |d: f64| {
        if d >= roll {
            1.0
        } else if d <= 0.0 {
            0.0
        } else {
            0.5 - 0.5 * (std::f64::consts::PI * d / roll).cos()
        }
    };
    if roll > 0.0 {
        edge(w - lo + roll / 2.0) * edge(hi + roll / 2.0 - w)
    } else if w >= lo && w <= hi {
        1.0
    } else {
        0.0
    }
}

/// Filtered `n`-th lag derivative on the lag grid of `corr`, as
/// `(magnitude, envelope)`. For real series the magnitude is `|Re|` of the
/// zero-phase output and the envelope the modulus of its analytic signal;
/// complex series use the modulus for both.
pub fn filtered_derivative(
    corr: &CorrelationFunction,
    pair: usize,
    opts: &PickOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = corr.values.get(pair).ok_or_else(|| Error::InvalidArgument("pair not in correlation".into()))?;
    let n = v.len();
    let dt = corr.lag_step();
    if n < 8 || !(dt > 0.0) {
        return Err(Error::WindowTooShort("too few lags to pick from".into()));
    }
    let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let real = v.iter().all(|z| z.im.abs() <= 1e-12 * scale);
    let size = (2 * n).next_power_of_two();
    let nt = ((opts.taper * n as f64).round() as usize).max(1);
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    for (i, z) in v.iter().enumerate() {
        let edge = i.min(n - 1 - i);
        let w = if edge >= nt {
            1.0
        } else {
            0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / nt as f64).cos()
        };
        buf[i] = if real { Complex64::new(z.re, 0.0) } else { *z } * w;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    let dw = 2.0 * std::f64::consts::PI / (size as f64 * dt);
    for (j, b) in buf.iter_mut().enumerate() {
        let signed = if j <= size / 2 { j as f64 } else { j as f64 - size as f64 };
        let w = signed * dw;
        let mut h = Complex64::new(band_gain(w, opts.band, opts.rolloff), 0.0);
        h *= Complex64::new(0.0, w).powu(opts.derivative_order);
        *b *= h;
    }
    let mut analytic = buf.clone();
    let inv = planner.plan_fft_inverse(size);
    inv.process(&mut buf);
    let norm = 1.0 / size as f64;
    let mag: Vec<f64> = buf[..n].iter().map(|z| if real { z.re.abs() * norm } else { z.norm() * norm }).collect();
    if !real {
        return Ok((mag.clone(), mag));
    }
    for (j, b) in analytic.iter_mut().enumerate() {
        if j > size / 2 {
            *b = Complex64::new(0.0, 0.0);
        } else if j > 0 && 2 * j < size {
            *b *= 2.0;
        }
    }
    inv.process(&mut analytic);
    Ok((mag, analytic[..n].iter().map(|z| z.norm() * norm).collect()))
}

/// Largest arrival of `pair` at positive lag: `τ*` maximizes the magnitude
/// of the filtered lag derivative, refined by a parabola through the three
/// samples around the peak. `snr` is the peak envelope over its median.
pub fn pick_travel_time(corr: &CorrelationFunction, pair: Pair, opts: &PickOptions) -> Result<Pick> {
    let p = corr.pair_index(pair).ok_or_else(|| Error::InvalidArgument(format!("pair {pair:?} not present")))?;
    let same = pair.a == pair.b
        || corr.stations.get(pair.a).zip(corr.stations.get(pair.b)).map(|(x, y)| x == y).unwrap_or(false);
    if same {
        return Err(Error::Degenerate("coincident stations have no positive-lag arrival".into()));
    }
    let (mag, env) = filtered_derivative(corr, p, opts)?;
    let n = mag.len();
    let nt = ((opts.taper * n as f64).round() as usize).max(1);
    let dt = corr.lag_step();
    let search: Vec<usize> =
        (0..n - nt).filter(|&i| corr.lags[i] > 0.0 && corr.lags[i] >= opts.min_lag).collect();
    if search.len() < 3 {
        return Err(Error::WindowTooShort("no positive lags to search".into()));
    }
    let best = *search.iter().max_by(|&&i, &&j| mag[i].total_cmp(&mag[j])).unwrap();
    let mut sorted: Vec<f64> = search.iter().map(|&i| env[i]).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let peak = sorted[sorted.len() - 1];
    let snr = if median > 0.0 { peak / median } else if peak > 0.0 { f64::INFINITY } else { 0.0 };
    if !(snr >= opts.snr_threshold) {
        return Err(Error::NoReliableArrival { snr });
    }
    let mut tau = corr.lags[best];
    let mut amplitude = mag[best];
    if best > 0 && best + 1 < n {
        let (y0, y1, y2) = (mag[best - 1], mag[best], mag[best + 1]);
        let den = y0 - 2.0 * y1 + y2;
        if den < 0.0 {
            let off = (0.5 * (y0 - y2) / den).clamp(-0.5, 0.5);
            tau += off * dt;
            amplitude = y1 - 0.25 * (y0 - y2) * off;
        }
    }
    Ok(Pick { tau, amplitude, snr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{symmetric_lags, Provenance};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn corr(lags: Vec<f64>, values: Vec<Complex64>, a: f64, b: f64) -> CorrelationFunction {
        CorrelationFunction {
            lags,
            stations: vec![vec![a], vec![b]],
            pairs: vec![Pair::new(0, 1), Pair::new(0, 0)],
            values: vec![values.clone(), values],
            sigma: None,
            provenance: Provenance::ClosedForm,
        }
    }

    #[test]
    fn kink_is_located() {
        // A ramp that turns on at τ₀ has its second derivative concentrated there.
        let lags = symmetric_lags(0.05, 200);
        let t0 = 3.0;
        let v: Vec<Complex64> =
            lags.iter().map(|&t| Complex64::new(if t > t0 { (-(t - t0)).exp() } else { 1.0 }, 0.0)).collect();
        let c = corr(lags, v, 0.0, 1.0);
        let p = pick_travel_time(&c, Pair::new(0, 1), &PickOptions { band: Some((0.0, 15.0)), ..Default::default() })
            .unwrap();
        assert!((p.tau - t0).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn coincident_stations_are_degenerate() {
        let lags = symmetric_lags(0.1, 50);
        let v = vec![Complex64::new(1.0, 0.0); lags.len()];
        let c = corr(lags, v, 0.0, 1.0);
        assert!(matches!(pick_travel_time(&c, Pair::new(0, 0), &PickOptions::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pure_noise_has_no_arrival() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let lags = symmetric_lags(0.05, 400);
        let v: Vec<Complex64> =
            lags.iter().map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0)).collect();
        let c = corr(lags, v, 0.0, 1.0);
        let opts = PickOptions { band: Some((0.5, 8.0)), ..Default::default() };
        assert!(matches!(pick_travel_time(&c, Pair::new(0, 1), &opts), Err(Error::NoReliableArrival { .. })));
    }
}
