use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::empirical::single_lag;
use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, NoiseStream};
use crate::propagation::{causal_solve_with, DampedWaveModel, Forcing, NoForcing, Observable, SolveOptions};
use crate::util::linear_fit;

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicReport {
    pub durations: Vec<f64>,
    /// Across-realization variance of `C_T(τ)` per duration.
    pub variances: Vec<f64>,
    pub mean: Vec<Complex64>,
    /// Slope of `log Var` against `log T`; NaN when degenerate.
    pub slope: f64,
    /// Bootstrap standard error of the slope over realizations.
    pub slope_se: f64,
    pub r2: f64,
    /// Set when every variance vanishes (deterministic forcing).
    pub degenerate: bool,
    pub realizations: usize,
}

/// Configuration for [`ergodic_convergence`].
#[derive(Debug, Clone)]
pub struct ErgodicSetup<'a> {
    pub model: &'a DampedWaveModel,
    /// `None` runs the deterministic unforced dynamics from `initial`.
    pub noise: Option<&'a NoiseSpec>,
    pub dt: f64,
    pub stations: [Vec<f64>; 2],
    /// Lag in steps.
    pub lag: usize,
    pub durations: Vec<f64>,
    pub realizations: usize,
    pub burn_in_steps: usize,
    pub first_realization: u64,
    pub workers: usize,
    pub bootstrap: usize,
}

fn variance(xs: &[Complex64]) -> f64 {
    let n = xs.len() as f64;
    let m: Complex64 = xs.iter().sum::<Complex64>() / n;
    xs.iter().map(|x| (x - m).norm_sqr()).sum::<f64>() / (n - 1.0)
}

/// Variance of `C_T(τ, A, B)` across realizations for each `T`, with each
/// `T` read as a prefix of one long trajectory per realization.
pub fn ergodic_convergence(setup: &ErgodicSetup) -> Result<ErgodicReport> {
    let mut durations = setup.durations.clone();
    durations.sort_by(f64::total_cmp);
    if durations.len() < 3 || durations[durations.len() - 1] < 16.0 * durations[0] {
        return Err(Error::InvalidArgument("need at least three durations spanning a factor 16".into()));
    }
    if setup.realizations < 2 {
        return Err(Error::InvalidArgument("need at least two realizations".into()));
    }
    let counts: Vec<usize> = durations.iter().map(|t| (t / setup.dt).round() as usize).collect();
    if counts[0] <= 4 * setup.lag {
        return Err(Error::WindowTooShort("shortest duration is within four lags".into()));
    }
    let total = counts[counts.len() - 1] + setup.lag;
    let opts = SolveOptions {
        burn_in_steps: setup.burn_in_steps,
        require_stationary: setup.noise.is_some(),
        observable: Observable::Field,
        snapshot_stride: None,
        initial: None,
    };
    let dec = setup.model.decomposition();
    let stations = setup.stations.to_vec();
    let run = |r: usize| -> Result<Vec<Complex64>> {
        let mut forcing: Box<dyn Forcing> = match setup.noise {
            Some(spec) => Box::new(NoiseStream::new(dec, spec, setup.first_realization + r as u64)?),
            None => Box::new(NoForcing),
        };
        let traj = causal_solve_with(setup.model, forcing.as_mut(), setup.dt, total, &stations, &opts)?;
        let a = traj.station(0, 0);
        let b = traj.station(0, 1);
        Ok(counts.iter().map(|&n| single_lag(a, b, setup.lag, n)).collect())
    };
    let rows: Vec<Result<Vec<Complex64>>> = if setup.workers <= 1 {
        (0..setup.realizations).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(setup.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| (0..setup.realizations).into_par_iter().map(run).collect())
    };
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let column = |j: usize, idx: &mut dyn Iterator<Item = usize>| -> Vec<Complex64> { idx.map(|r| rows[r][j]).collect() };
    let nt = durations.len();
    let variances: Vec<f64> = (0..nt).map(|j| variance(&column(j, &mut (0..rows.len())))).collect();
    let mean: Vec<Complex64> =
        (0..nt).map(|j| rows.iter().map(|r| r[j]).sum::<Complex64>() / rows.len() as f64).collect();
    let scale = mean.iter().map(|m| m.norm()).fold(0.0, f64::max).max(1e-300);
    let degenerate = variances.iter().all(|v| *v <= 1e-24 * scale * scale);
    let realizations = rows.len();
    if degenerate {
        return Ok(ErgodicReport {
            durations,
            variances,
            mean,
            slope: f64::NAN,
            slope_se: f64::NAN,
            r2: f64::NAN,
            degenerate,
            realizations,
        });
    }
    let x: Vec<f64> = durations.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let (_, slope, r2) = linear_fit(&x, &y);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut slopes = Vec::with_capacity(setup.bootstrap);
    let mut pick = vec![0usize; realizations];
    for _ in 0..setup.bootstrap {
        pick.iter_mut().for_each(|p| *p = rng.gen_range(0..realizations));
        let yb: Vec<f64> = (0..nt).map(|j| variance(&column(j, &mut pick.iter().copied())).ln()).collect();
        slopes.push(linear_fit(&x, &yb).1);
    }
    let slope_se = if slopes.len() > 1 {
        let (_, s) = crate::util::mean_std(&slopes);
        s
    } else {
        f64::NAN
    };
    Ok(ErgodicReport { durations, variances, mean, slope, slope_se, r2, degenerate, realizations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Band;
    use crate::propagation::{Damping, ModelSpec, Variant};
    use crate::spectral::DiscreteDomain;

    fn model() -> DampedWaveModel {
        DampedWaveModel::new(ModelSpec {
            domain: DiscreteDomain::circle(5).unwrap(),
            variant: Variant::SecondOrder { damping: Damping::Constant(0.5) },
            epsilon: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn unforced_dynamics_are_flagged_degenerate() {
        let m = model();
        let setup = ErgodicSetup {
            model: &m,
            noise: None,
            dt: 0.1,
            stations: [vec![0.0], vec![1.0]],
            lag: 2,
            durations: vec![10.0, 40.0, 160.0],
            realizations: 4,
            burn_in_steps: 0,
            first_realization: 0,
            workers: 1,
            bootstrap: 10,
        };
        let rep = ergodic_convergence(&setup).unwrap();
        assert!(rep.degenerate);
        assert!(rep.slope.is_nan());
    }

    #[test]
    fn short_span_is_rejected() {
        let m = model();
        let mut spec = NoiseSpec::white(m.spec.domain.clone(), 0.1, 1);
        spec.band = Band::Above { lo: 0.5 };
        let setup = ErgodicSetup {
            model: &m,
            noise: Some(&spec),
            dt: 0.1,
            stations: [vec![0.0], vec![1.0]],
            lag: 2,
            durations: vec![10.0, 40.0, 80.0],
            realizations: 4,
            burn_in_steps: 200,
            first_realization: 0,
            workers: 1,
            bootstrap: 10,
        };
        assert!(ergodic_convergence(&setup).is_err());
    }
}
