use corrlab_core::correlation::*;
use corrlab_core::noise::*;
use corrlab_core::propagation::*;
use corrlab_core::spectral::DiscreteDomain;
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

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
        variant: Variant::FirstOrderScalar { dispersion: vec![0.2, 0.8, 0.3], damping: k },
        epsilon: 1.0,
    })
    .unwrap()
}

fn white_above(m: &DampedWaveModel, dt: f64) -> NoiseSpec {
    let mut spec = NoiseSpec::white(m.spec.domain.clone(), dt, 3);
    spec.band = Band::Above { lo: 0.5 };
    spec
}

fn windowed(m: &DampedWaveModel) -> NoiseSpec {
    let mut spec = NoiseSpec::white(m.spec.domain.clone(), 0.05, 3);
    spec.taps = vec![5.0, 2.0, -1.0];
    spec.band = Band::Above { lo: 0.5 };
    spec.window = Window::Smooth { center: vec![4.0], half_width: 0.6, taper: 0.6 };
    spec
}

fn scenarios() -> Vec<(DampedWaveModel, NoiseSpec)> {
    let w = wave(9, 0.5);
    let s = scalar(9, 0.6);
    let mut ss = NoiseSpec::white(s.spec.domain.clone(), 0.05, 3);
    ss.taps = vec![4.0, -2.0, 1.0];
    let tc = DampedWaveModel::new(ModelSpec {
        domain: DiscreteDomain::circle(9).unwrap(),
        variant: Variant::TwoComponent { damping: 0.5 },
        epsilon: 1.0,
    })
    .unwrap();
    let wn = white_above(&w, 0.05);
    let sw = windowed(&s);
    let tn = windowed(&tc);
    vec![(w, wn), (s.clone(), sw), (s, ss), (tc, tn)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn correlation_is_hermitian_in_lag(which in 0usize..4, tau in 0.0..6.0f64, xa in 0.0..6.2f64, xb in 0.0..6.2f64) {
        let (m, spec) = &scenarios()[which];
        let kern = covariance_kernel(m.decomposition(), spec).unwrap();
        let th = CorrelationTheory::new(m, &kern).unwrap();
        let ab = th.station_kernel(&[xa], &[xb], Observation::Components).unwrap();
        let ba = th.station_kernel(&[xb], &[xa], Observation::Components).unwrap();
        let p = ab.eval(-tau);
        let q = ba.eval(tau);
        let scale = q.iter().map(|v| v.norm()).fold(1e-300, f64::max);
        // Entry (i, j) at -τ equals the conjugate of entry (j, i) at +τ.
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((p[2 * i + j] - q[2 * j + i].conj()).norm() <= 1e-10 * scale);
            }
        }
    }
}

#[test]
fn pi_is_positive_semidefinite() {
    for (m, spec) in scenarios() {
        let kern = covariance_kernel(m.decomposition(), &spec).unwrap();
        let th = CorrelationTheory::new(&m, &kern).unwrap();
        let pi = th.pi_matrix();
        let herm = (&pi + pi.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = herm.symmetric_eigenvalues();
        let norm = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(eig.iter().all(|&v| v >= -1e-10 * norm), "{eig:?}");
        assert!((&pi - pi.adjoint()).norm() <= 1e-10 * norm);
    }
}

#[test]
fn formulas_agree_pairwise() {
    let taus = [0.0, 0.3, 1.1, 2.6, 5.0];
    for n in [9, 33, 65] {
        let m = wave(n, 0.5);
        let spec = white_above(&m, 0.05);
        let kern = covariance_kernel(m.decomposition(), &spec).unwrap();
        let st = vec![vec![0.4], vec![2.0]];
        let c = theoretical_correlation(&m, &kern, &taus, &st, &[Pair::new(0, 1)], Observable::Field).unwrap();
        for (i, &t) in taus.iter().enumerate() {
            let cf = white_noise_closed_form(&m, t, &st[0], &st[1]).unwrap();
            assert!((c.values[0][i] - cf).norm() <= 1e-8 * (1.0 + cf.norm()), "{n} {t}");
        }
        let s = scalar(n, 0.6);
        let mut ss = NoiseSpec::white(s.spec.domain.clone(), 0.05, 3);
        ss.taps = vec![4.0, -2.0, 1.0];
        ss.band = Band::Interval { lo: 0.5, hi: 6.0 };
        let kern = covariance_kernel(s.decomposition(), &ss).unwrap();
        let lags = [0.2, 0.9, 2.5];
        let c = theoretical_correlation(&s, &kern, &lags, &st, &[Pair::new(0, 1)], Observable::Field).unwrap();
        for (i, &t) in lags.iter().enumerate() {
            let e = exact_scalar_formula(&s, &ss, t, &st[0], &st[1]).unwrap();
            assert!((c.values[0][i] - e).norm() <= 1e-8 * (1.0 + e.norm()), "{n} {t}");
        }
    }
}

#[test]
fn travel_time_is_symmetric_in_the_stations() {
    let m = wave(33, 0.5);
    let spec = white_above(&m, 0.02);
    let kern = covariance_kernel(m.decomposition(), &spec).unwrap();
    let st = vec![vec![0.0], vec![PI / 2.0]];
    let lags = symmetric_lags(0.02, 200);
    let pairs = [Pair::new(1, 0), Pair::new(0, 1)];
    let c = theoretical_correlation(&m, &kern, &lags, &st, &pairs, Observable::Field).unwrap();
    let opts = PickOptions { band: Some((0.5, 8.5)), ..Default::default() };
    let ab = pick_travel_time(&c, pairs[0], &opts).unwrap();
    let ba = pick_travel_time(&c, pairs[1], &opts).unwrap();
    assert!((ab.tau - ba.tau).abs() <= 0.02, "{ab:?} {ba:?}");
    assert!((ab.tau - PI / 2.0).abs() <= 0.02, "{ab:?}");
}

fn small_ensemble(m: &DampedWaveModel, spec: &NoiseSpec, realizations: usize, first: u64) -> CorrelationFunction {
    let setup = EnsembleSetup {
        model: m,
        noise: spec,
        stations: vec![vec![0.0], vec![1.5]],
        pairs: vec![Pair::new(0, 0), Pair::new(1, 0)],
        observable: Observable::Field,
        burn_in_steps: 400,
        steps: 8000,
        max_lag: 60,
        realizations,
        first_realization: first,
        workers: 1,
    };
    ensemble_correlation(&setup).unwrap()
}

#[test]
fn monte_carlo_matches_theory_and_error_halves() {
    let m = wave(9, 0.5);
    let mut spec = white_above(&m, 0.05);
    spec.real = true;
    let c = small_ensemble(&m, &spec, 64, 0);
    let kern = covariance_kernel(m.decomposition(), &spec).unwrap();
    let th = theoretical_correlation(&m, &kern, &c.lags, &c.stations, &c.pairs, Observable::Field).unwrap();
    let sig = c.sigma.as_ref().unwrap();
    let mut inside = 0;
    let mut total = 0;
    for p in 0..2 {
        for l in 0..c.lags.len() {
            total += 1;
            if (c.values[p][l] - th.values[p][l]).norm() <= 3.0 * sig[p][l] {
                inside += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total}");
    // Doubling the realizations halves the squared standard error.
    let half = small_ensemble(&m, &spec, 32, 0);
    let s32: f64 = half.sigma.as_ref().unwrap()[1].iter().map(|s| s * s).sum();
    let s64: f64 = sig[1].iter().map(|s| s * s).sum();
    let ratio = s32 / s64;
    assert!((ratio - 2.0).abs() < 0.6, "{ratio}");
}

#[test]
fn ensemble_is_deterministic() {
    let m = wave(9, 0.5);
    let spec = white_above(&m, 0.05);
    let a = small_ensemble(&m, &spec, 2, 5);
    let b = small_ensemble(&m, &spec, 2, 5);
    assert_eq!(a.values, b.values);
}

#[test]
fn correlation_csv_columns() {
    let m = wave(9, 0.5);
    let spec = white_above(&m, 0.05);
    let kern = covariance_kernel(m.decomposition(), &spec).unwrap();
    let lags = symmetric_lags(0.1, 5);
    let c = theoretical_correlation(&m, &kern, &lags, &[vec![0.0], vec![1.0]], &[Pair::new(0, 1)], Observable::Field)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    c.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("pair_id,tau,re,im,sigma"));
    assert_eq!(text.lines().count(), 1 + lags.len());
}
