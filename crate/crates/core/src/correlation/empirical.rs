use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::{symmetric_lags, CorrelationFunction, Pair, Provenance};
use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, NoiseStream};
use crate::propagation::{causal_solve_with, DampedWaveModel, FieldTrajectory, Observable, SolveOptions};
use crate::util::pairwise_sum;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Unbiased lag products `C_T(τ_m) = 1/(N-|m|) Σ_n u_A(n) conj(u_B(n-m))`
/// over the steps `start..start+len` of `traj`, for `|m| ≤ max_lag`.
///
/// `min_start_time` is the burn-in the caller requires before the window.
pub fn empirical_correlation(
    traj: &FieldTrajectory,
    pairs: &[Pair],
    max_lag: usize,
    window: Option<(usize, usize)>,
    min_start_time: f64,
) -> Result<CorrelationFunction> {
    let (start, len) = window.unwrap_or((0, traj.steps));
    if start + len > traj.steps {
        return Err(Error::WindowTooShort(format!(
            "window {start}+{len} exceeds the {} recorded steps",
            traj.steps
        )));
    }
    if 4 * max_lag >= len {
        return Err(Error::WindowTooShort(format!("max lag {max_lag} must stay below a quarter of {len}")));
    }
    let t_start = traj.start_time + start as f64 * traj.dt;
    if t_start + 1e-9 < min_start_time {
        return Err(Error::BurnInTooShort { available: t_start, required: min_start_time });
    }
    let ncomp = traj.series.len();
    for p in pairs {
        if p.a >= traj.stations.len() || p.b >= traj.stations.len() || p.ca >= ncomp || p.cb >= ncomp {
            return Err(Error::InvalidArgument(format!("pair {p:?} refers to missing data")));
        }
    }
    let size = (len + max_lag + 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut cache: Vec<((usize, usize), Vec<Complex64>)> = Vec::new();
    let spectrum = |c: usize, s: usize, cache: &mut Vec<((usize, usize), Vec<Complex64>)>| -> usize {
        if let Some(i) = cache.iter().position(|(k, _)| *k == (c, s)) {
            return i;
        }
        let mut buf = vec![ZERO; size];
        buf[..len].copy_from_slice(&traj.series[c][s][start..start + len]);
        fwd.process(&mut buf);
        cache.push(((c, s), buf));
        cache.len() - 1
    };
    let mut values = Vec::with_capacity(pairs.len());
    for p in pairs {
        let ia = spectrum(p.ca, p.a, &mut cache);
        let ib = spectrum(p.cb, p.b, &mut cache);
        let mut prod: Vec<Complex64> =
            cache[ia].1.iter().zip(&cache[ib].1).map(|(x, y)| x * y.conj()).collect();
        inv.process(&mut prod);
        let scale = 1.0 / size as f64;
        let row = (-(max_lag as i64)..=max_lag as i64)
            .map(|m| {
                let idx = m.rem_euclid(size as i64) as usize;
                prod[idx] * scale / (len - m.unsigned_abs() as usize) as f64
            })
            .collect();
        values.push(row);
    }
    Ok(CorrelationFunction {
        lags: symmetric_lags(traj.dt, max_lag),
        stations: traj.stations.clone(),
        pairs: pairs.to_vec(),
        values,
        sigma: None,
        provenance: Provenance::Empirical { duration: len as f64 * traj.dt, realizations: 1 },
    })
}

/// Mean over realizations with standard error `sqrt((var re + var im)/R)`.
pub fn mean_with_sigma(parts: &[CorrelationFunction]) -> Result<CorrelationFunction> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("no realizations".into()))?;
    let r = parts.len();
    let np = first.pairs.len();
    let nl = first.lags.len();
    let mut values = vec![vec![ZERO; nl]; np];
    let mut sigma = vec![vec![0.0; nl]; np];
    let mut re = vec![0.0; r];
    let mut im = vec![0.0; r];
    for p in 0..np {
        for l in 0..nl {
            for (i, part) in parts.iter().enumerate() {
                re[i] = part.values[p][l].re;
                im[i] = part.values[p][l].im;
            }
            let (mr, sr) = crate::util::mean_std(&re);
            let (mi, si) = crate::util::mean_std(&im);
            values[p][l] = Complex64::new(mr, mi);
            sigma[p][l] = ((sr * sr + si * si) / r as f64).sqrt();
        }
    }
    let duration = match first.provenance {
        Provenance::Empirical { duration, .. } => duration,
        _ => f64::NAN,
    };
    Ok(CorrelationFunction {
        lags: first.lags.clone(),
        stations: first.stations.clone(),
        pairs: first.pairs.clone(),
        values,
        sigma: Some(sigma),
        provenance: Provenance::Empirical { duration, realizations: r },
    })
}

/// Monte Carlo configuration: each realization is simulated from its own
/// stream, correlated over its full recorded window, and discarded.
#[derive(Debug, Clone)]
pub struct EnsembleSetup<'a> {
    pub model: &'a DampedWaveModel,
    pub noise: &'a NoiseSpec,
    pub stations: Vec<Vec<f64>>,
    pub pairs: Vec<Pair>,
    pub observable: Observable,
    pub burn_in_steps: usize,
    pub steps: usize,
    pub max_lag: usize,
    pub realizations: usize,
    pub first_realization: u64,
    pub workers: usize,
}

pub fn ensemble_correlation(setup: &EnsembleSetup) -> Result<CorrelationFunction> {
    if setup.realizations < 2 {
        return Err(Error::InvalidArgument("need at least two realizations".into()));
    }
    let opts = SolveOptions {
        burn_in_steps: setup.burn_in_steps,
        require_stationary: true,
        observable: setup.observable,
        snapshot_stride: None,
        initial: None,
    };
    let dec = setup.model.decomposition();
    let run = |r: usize| -> Result<CorrelationFunction> {
        let mut stream = NoiseStream::new(dec, setup.noise, setup.first_realization + r as u64)?;
        let traj = causal_solve_with(setup.model, &mut stream, setup.noise.dt, setup.steps, &setup.stations, &opts)?;
        empirical_correlation(&traj, &setup.pairs, setup.max_lag, None, 0.0)
    };
    let parts: Vec<Result<CorrelationFunction>> = if setup.workers <= 1 {
        (0..setup.realizations).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(setup.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| (0..setup.realizations).into_par_iter().map(run).collect())
    };
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    mean_with_sigma(&parts)
}

/// `C_T(τ_m)` at a single lag over the first `n` samples after the lag
/// offset, summed in tree order.
pub(crate) fn single_lag(a: &[Complex64], b: &[Complex64], m: usize, n: usize) -> Complex64 {
    let re: Vec<f64> = (m..m + n).map(|i| (a[i] * b[i - m].conj()).re).collect();
    let im: Vec<f64> = (m..m + n).map(|i| (a[i] * b[i - m].conj()).im).collect();
    Complex64::new(pairwise_sum(&re), pairwise_sum(&im)) / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(a: Vec<Complex64>, b: Vec<Complex64>) -> FieldTrajectory {
        let steps = a.len();
        FieldTrajectory {
            dt: 0.1,
            steps,
            stations: vec![vec![0.0], vec![1.0]],
            station_indices: vec![None, None],
            series: vec![vec![a, b]],
            snapshots: vec![],
            start_time: 0.0,
        }
    }

    #[test]
    fn constant_series_correlate_to_one() {
        let one = vec![Complex64::new(1.0, 0.0); 200];
        let c = empirical_correlation(&traj(one.clone(), one), &[Pair::new(0, 1)], 20, None, 0.0).unwrap();
        for v in &c.values[0] {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn delay_line_peaks_at_the_delay() {
        // u(A, t) = u(B, t - τ₀), so C_{A,B} peaks at τ = τ₀.
        let n = 4000;
        let delay = 7;
        let mut x = 0.3f64;
        let b: Vec<Complex64> = (0..n)
            .map(|_| {
                x = (3.9 * x * (1.0 - x)).clamp(1e-9, 1.0 - 1e-9);
                Complex64::new(x - 0.5, 0.0)
            })
            .collect();
        let a: Vec<Complex64> = (0..n).map(|i| if i >= delay { b[i - delay] } else { Complex64::new(0.0, 0.0) }).collect();
        let c = empirical_correlation(&traj(a, b), &[Pair::new(0, 1)], 50, None, 0.0).unwrap();
        let best = (0..c.lags.len()).max_by(|&i, &j| c.values[0][i].norm().total_cmp(&c.values[0][j].norm())).unwrap();
        assert!((c.lags[best] - delay as f64 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn fft_matches_direct_sum() {
        let n = 300;
        let a: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64 * 0.73).cos(), 0.2)).collect();
        let c = empirical_correlation(&traj(a.clone(), b.clone()), &[Pair::new(0, 1)], 30, None, 0.0).unwrap();
        for (l, m) in (-30i64..=30).enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            let mut count = 0;
            for i in 0..n as i64 {
                let j = i - m;
                if j >= 0 && j < n as i64 {
                    s += a[i as usize] * b[j as usize].conj();
                    count += 1;
                }
            }
            assert!((c.values[0][l] - s / count as f64).norm() < 1e-12);
        }
    }

    #[test]
    fn short_window_and_early_start_are_rejected() {
        let one = vec![Complex64::new(1.0, 0.0); 40];
        let t = traj(one.clone(), one);
        assert!(matches!(empirical_correlation(&t, &[Pair::new(0, 1)], 10, None, 0.0), Err(Error::WindowTooShort(_))));
        assert!(matches!(
            empirical_correlation(&t, &[Pair::new(0, 1)], 2, None, 1.0),
            Err(Error::BurnInTooShort { .. })
        ));
    }
}
