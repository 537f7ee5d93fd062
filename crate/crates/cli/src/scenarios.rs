use std::fmt::Write as _;
use std::path::Path;

use corrlab_core::correlation::*;
use corrlab_core::noise::{covariance_kernel, Band, NoiseSpec};
use corrlab_core::propagation::{DampedWaveModel, ModelSpec, Observable};
use corrlab_core::rays::integrate_flow;
use corrlab_core::waveguide::{dispersion_table, sturm_liouville_eigs};
use serde_json::{json, Value};

use crate::config::{Scenario, ScenarioConfig};

pub struct Outcome {
    pub checks: Vec<CheckReport>,
    pub summary: Value,
}

type Res<T> = Result<T, String>;

fn core<T>(r: corrlab_core::Result<T>) -> Res<T> {
    r.map_err(|e| e.to_string())
}

fn write(dir: &Path, name: &str, text: &str) -> Res<()> {
    std::fs::write(dir.join(name), text).map_err(|e| format!("{name}: {e}"))
}

fn stations(cfg: &ScenarioConfig) -> (Vec<f64>, Vec<f64>) {
    let st = cfg.stations.as_ref().expect("validated");
    (st[0].clone(), st[1].clone())
}

pub fn run(cfg: &ScenarioConfig, dir: &Path, workers: usize) -> Res<Outcome> {
    match cfg.scenario {
        Scenario::WhiteNoiseGreen => white_noise_green(cfg, dir),
        Scenario::ExactScalar => exact_scalar(cfg, dir),
        Scenario::BandedNoiseSemiclassical => banded(cfg, dir, workers),
        Scenario::TwoComponentSuppression => suppression(cfg, dir),
        Scenario::WaveguideDispersion => waveguide(cfg, dir),
        Scenario::RayTraveltime => rays(cfg, dir),
        Scenario::ErgodicConvergence => ergodic(cfg, dir, workers),
    }
}

fn white_noise_green(cfg: &ScenarioConfig, dir: &Path) -> Res<Outcome> {
    let m = cfg.model().map_err(|e| e.0)?;
    let (a, b) = stations(cfg);
    let lags = cfg.lags.as_ref().expect("validated");
    let a_damp = m.constant_damping().expect("validated");
    let taus: Vec<f64> = lags.symmetric().into_iter().filter(|&t| t != 0.0).collect();
    let steps = [4.0, 2.0, 1.0].map(|k| k * lags.step.min(0.02) / 4.0);
    let id = core(derivative_green_identity(&m, &taus, &a, &b, &steps))?;
    let spec = match &cfg.noise {
        Some(_) => cfg.noise(&m).map_err(|e| e.0)?,
        None => {
            let mut s = NoiseSpec::white(m.spec.domain.clone(), 0.05, cfg.seed);
            s.band = Band::Above { lo: 0.5 };
            s
        }
    };
    let kern = core(covariance_kernel(m.decomposition(), &spec))?;
    let all = lags.symmetric();
    let st = vec![a.clone(), b.clone()];
    let theory = core(theoretical_correlation(&m, &kern, &all, &st, &[Pair::new(0, 1)], Observable::Field))?;
    let mut csv = String::from("tau,closed_form,theory_re,theory_im,green\n");
    let mut agree = 0.0f64;
    for (i, &t) in all.iter().enumerate() {
        let cf = core(white_noise_closed_form(&m, t, &a, &b))?;
        let g = if t > 0.0 { core(greens_function_nonzero(&m, t, &a, &b))?.re } else { 0.0 };
        let th = theory.values[0][i];
        agree = agree.max((th - cf).norm() / (1.0 + cf.norm()));
        writeln!(csv, "{t},{:.15e},{:.15e},{:.15e},{:.15e}", cf.re, th.re, th.im, g).unwrap();
    }
    write(dir, "correlation.csv", &csv)?;
    let mut fd = String::from("h,residual\n");
    for (h, r) in &id.differences {
        writeln!(fd, "{h},{r:.15e}").unwrap();
    }
    write(dir, "derivative_convergence.csv", &fd)?;
    let mut checks = id.checks.clone();
    checks.push(CheckReport::new("theory_vs_closed_form", agree, 1e-8));
    Ok(Outcome {
        checks,
        summary: json!({ "damping": a_damp, "exact_residual": id.exact_residual, "fd_order": id.order }),
    })
}

fn exact_scalar(cfg: &ScenarioConfig, dir: &Path) -> Res<Outcome> {
    let m = cfg.model().map_err(|e| e.0)?;
    let spec = cfg.noise(&m).map_err(|e| e.0)?;
    let (a, b) = stations(cfg);
    let lags = cfg.lags.as_ref().expect("validated");
    let t0 = spec.support();
    let taus: Vec<f64> = lags.positive().into_iter().map(|t| t + t0).collect();
    let kern = core(covariance_kernel(m.decomposition(), &spec))?;
    let st = vec![a.clone(), b.clone()];
    let theory = core(theoretical_correlation(&m, &kern, &taus, &st, &[Pair::new(0, 1)], Observable::Field))?;
    let mut csv = String::from("tau,theory_re,theory_im,formula_re,formula_im\n");
    let mut worst = 0.0f64;
    for (i, &t) in taus.iter().enumerate() {
        let e = core(exact_scalar_formula(&m, &spec, t, &a, &b))?;
        let th = theory.values[0][i];
        worst = worst.max((th - e).norm() / (1.0 + e.norm()));
        writeln!(csv, "{t},{:.15e},{:.15e},{:.15e},{:.15e}", th.re, th.im, e.re, e.im).unwrap();
    }
    write(dir, "correlation.csv", &csv)?;
    Ok(Outcome {
        checks: vec![CheckReport::new("theory_vs_exact_scalar", worst, 1e-8)],
        summary: json!({ "filter_support": t0 }),
    })
}

fn banded(cfg: &ScenarioConfig, dir: &Path, workers: usize) -> Res<Outcome> {
    let m = cfg.model().map_err(|e| e.0)?;
    let spec = cfg.noise(&m).map_err(|e| e.0)?;
    let (a, b) = stations(cfg);
    let lags = cfg.lags.as_ref().expect("validated");
    let ens = cfg.ensemble.as_ref().expect("validated");
    let dt = spec.dt;
    let st = vec![a, b];
    let pairs = vec![Pair::new(1, 0), Pair::new(0, 1)];
    let setup = EnsembleSetup {
        model: &m,
        noise: &spec,
        stations: st.clone(),
        pairs: pairs.clone(),
        observable: Observable::Field,
        burn_in_steps: (ens.burn_in / dt).round() as usize,
        steps: (ens.duration / dt).round() as usize,
        max_lag: ((lags.count as f64 * lags.step) / dt).round().max(1.0) as usize,
        realizations: cfg.realizations.expect("validated"),
        first_realization: 0,
        workers,
    };
    let mc = core(ensemble_correlation(&setup))?;
    let kern = core(covariance_kernel(m.decomposition(), &spec))?;
    let th = core(theoretical_correlation(&m, &kern, &mc.lags, &st, &pairs, Observable::Field))?;
    core(mc.write_csv(&dir.join("empirical.csv")))?;
    core(th.write_csv(&dir.join("theory.csv")))?;
    let sig = mc.sigma.as_ref().expect("ensemble sigma");
    let total = mc.lags.len() * pairs.len();
    let inside = (0..pairs.len())
        .flat_map(|p| (0..mc.lags.len()).map(move |l| (p, l)))
        .filter(|&(p, l)| (mc.values[p][l] - th.values[p][l]).norm() <= 3.0 * sig[p][l])
        .count();
    let frac = inside as f64 / total as f64;
    let mut checks = vec![CheckReport::new("mc_within_3_sigma_shortfall", (0.95 - frac).max(0.0), 0.0)];
    let mut summary = json!({ "fraction_within_3_sigma": frac, "lags": mc.lags.len() });
    let opts = PickOptions { band: ens.pick_band, ..Default::default() };
    match pick_travel_time(&mc, pairs[0], &opts) {
        Ok(p) => {
            summary["travel_time"] = json!(p.tau);
            summary["snr"] = json!(p.snr);
            if let Some(exp) = ens.expected_travel_time {
                checks.push(CheckReport::new("travel_time_error", (p.tau - exp).abs(), mc.lag_step()));
            }
        }
        Err(e) => {
            summary["pick_error"] = json!(e.to_string());
            if ens.expected_travel_time.is_some() {
                checks.push(CheckReport::new("travel_time_error", f64::INFINITY, mc.lag_step()));
            }
        }
    }
    Ok(Outcome { checks, summary })
}

fn suppression(cfg: &ScenarioConfig, dir: &Path) -> Res<Outcome> {
    let base = cfg.model().map_err(|e| e.0)?;
    let (a, b) = stations(cfg);
    let lags = cfg.lags.as_ref().expect("validated").positive();
    let mut csv = String::from("epsilon,clearance,max_cross,max_diagonal,ratio\n");
    let mut ratios = Vec::new();
    let mut control = false;
    for &eps in &cfg.suppression.as_ref().expect("validated").epsilons {
        let m = core(DampedWaveModel::new(ModelSpec { epsilon: eps, ..base.spec.clone() }))?;
        let mut spec = cfg.noise(&m).map_err(|e| e.0)?;
        spec.epsilon = eps;
        let r = core(cross_branch_correlation(&m, &spec, &a, &b, &lags))?;
        control |= r.control;
        writeln!(csv, "{eps},{},{:.15e},{:.15e},{:.15e}", r.clearance, r.max_cross, r.max_diagonal, r.ratio).unwrap();
        ratios.push((eps, r.ratio));
    }
    write(dir, "suppression.csv", &csv)?;
    ratios.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut checks = Vec::new();
    if !control {
        let rises = ratios.windows(2).filter(|w| w[1].1 >= w[0].1).count();
        checks.push(CheckReport::new("ratio_increases_as_epsilon_shrinks", rises as f64, 0.0));
        checks.push(CheckReport::new("ratio_at_smallest_epsilon", ratios.last().map_or(f64::NAN, |r| r.1), 0.1));
    }
    Ok(Outcome { checks, summary: json!({ "ratios": ratios, "control": control }) })
}

fn waveguide(cfg: &ScenarioConfig, dir: &Path) -> Res<Outcome> {
    let w = cfg.waveguide.as_ref().expect("validated");
    let (lo, hi, n) = w.xi;
    let xis: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let opts = w.options.clone().unwrap_or_default();
    let table = core(dispersion_table(&w.profile, w.x, &xis, &opts))?;
    core(table.write_csv(&dir.join("dispersion.csv")))?;
    let outside = table
        .points
        .iter()
        .flat_map(|p| p.lambda.iter().map(move |&l| (p.xi, l)))
        .filter(|&(xi, l)| !(table.n0 * xi * xi < l && l < table.n_inf * xi * xi))
        .count();
    let mut checks = vec![CheckReport::new("eigenvalues_outside_bounds", outside as f64, 0.0)];
    let mid = &table.points[n / 2];
    if !mid.lambda.is_empty() {
        let nodes = mid.nodes.max(400);
        let lam = |k: usize| core(sturm_liouville_eigs(&w.profile, w.x, mid.xi, mid.z_bot, k)).map(|s| s.modes[0].lambda);
        let (l1, l2, l4) = (lam(nodes / 4)?, lam(nodes / 2)?, lam(nodes)?);
        let order = ((l1 - l2) / (l2 - l4)).abs().log2();
        checks.push(CheckReport::new("grid_order_shortfall", (1.9 - order).max(0.0), 0.0));
    }
    Ok(Outcome {
        checks,
        summary: json!({ "mode_counts": table.mode_counts(), "branches": table.branch_count }),
    })
}

fn rays(cfg: &ScenarioConfig, dir: &Path) -> Res<Outcome> {
    let r = cfg.rays.as_ref().expect("validated");
    let tr = core(integrate_flow(&r.field, r.start, r.t_end, r.tol))?;
    core(tr.write_csv(&dir.join("trajectory.csv")))?;
    let h0 = r.field.h0(r.start.0, r.start.1);
    let mut checks = vec![
        CheckReport::new("symplectic_defect", tr.max_symplectic_defect(), 1e-8),
        CheckReport::new("energy_drift", tr.max_energy_drift(&r.field), 1e3 * r.tol * (1.0 + h0.abs())),
    ];
    let mut summary = json!({ "steps": tr.len(), "exit_time": tr.exit_time, "energy": h0 });
    if let Some(target) = r.target {
        let hit = crossing(&tr, target);
        summary["travel_time"] = json!(hit);
        if let Some(exp) = r.expected_travel_time {
            checks.push(CheckReport::new("travel_time_error", hit.map_or(f64::INFINITY, |t| (t - exp).abs()), 1e-6));
        }
    }
    Ok(Outcome { checks, summary })
}

/// First time the ray reaches position `x`, refined on the dense output.
fn crossing(tr: &corrlab_core::rays::RayTrajectory, x: f64) -> Option<f64> {
    let side = |s: &[f64; 8]| s[0] - x;
    let i = (1..tr.len()).find(|&i| side(&tr.states[i - 1]) * side(&tr.states[i]) <= 0.0)?;
    let (mut lo, mut hi) = (tr.times[i - 1], tr.times[i]);
    let f_lo = side(&tr.at(lo));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if side(&tr.at(mid)) * f_lo <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn ergodic(cfg: &ScenarioConfig, dir: &Path, workers: usize) -> Res<Outcome> {
    let m = cfg.model().map_err(|e| e.0)?;
    let spec = cfg.noise(&m).map_err(|e| e.0)?;
    let (a, b) = stations(cfg);
    let e = cfg.ergodic.as_ref().expect("validated");
    let setup = ErgodicSetup {
        model: &m,
        noise: Some(&spec),
        dt: spec.dt,
        stations: [a, b],
        lag: e.lag_steps,
        durations: cfg.durations.clone().expect("validated"),
        realizations: cfg.realizations.expect("validated"),
        burn_in_steps: (e.burn_in / spec.dt).round() as usize,
        first_realization: 0,
        workers,
        bootstrap: e.bootstrap,
    };
    let rep = core(ergodic_convergence(&setup))?;
    let mut csv = String::from("duration,variance\n");
    for (t, v) in rep.durations.iter().zip(&rep.variances) {
        writeln!(csv, "{t},{v:.15e}").unwrap();
    }
    write(dir, "variance.csv", &csv)?;
    Ok(Outcome {
        checks: vec![CheckReport::new("log_variance_slope_error", (rep.slope + 1.0).abs(), 0.15)],
        summary: json!({ "slope": rep.slope, "slope_se": rep.slope_se, "r2": rep.r2 }),
    })
}
