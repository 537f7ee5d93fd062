use corrlab_core::noise::*;
use corrlab_core::spectral::{build_laplacian, DiscreteDomain};
use num_complex::Complex64;

fn filtered(domain: DiscreteDomain) -> NoiseSpec {
    let mut spec = NoiseSpec::white(domain, 0.05, 41);
    spec.taps = vec![6.0, 3.0, -2.0, 1.0];
    spec.band = Band::Interval { lo: 0.5, hi: 3.5 };
    spec
}

/// Mean and standard error of `f(n) conj f(n - m)` over realizations.
fn lag_product(samples: &[Vec<Complex64>], n: usize, m: usize) -> (Complex64, f64) {
    let p: Vec<Complex64> = samples.iter().map(|s| s[n] * s[n - m].conj()).collect();
    let r = p.len() as f64;
    let mean: Complex64 = p.iter().sum::<Complex64>() / r;
    let var = p.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

#[test]
fn filtered_noise_is_stationary() {
    let d = DiscreteDomain::circle(9).unwrap();
    let dec = build_laplacian(&d).unwrap();
    let spec = filtered(d);
    let kern = covariance_kernel(&dec, &spec).unwrap();
    let mode = (0..dec.len()).find(|&k| dec.eigenvalues()[k] == 4.0).unwrap();
    let steps = 40;
    let samples: Vec<Vec<Complex64>> = (0..200)
        .map(|r| {
            let mut s = NoiseStream::new(&dec, &spec, r).unwrap();
            let mut out = vec![Complex64::new(0.0, 0.0); dec.len()];
            (0..steps)
                .map(|_| {
                    s.next_modes(&mut out).unwrap();
                    out[mode]
                })
                .collect()
        })
        .collect();
    let mut checks = 0;
    let mut inside = 0;
    for m in 0..5 {
        let expect = kern.operator_at(m as i64)[(mode, mode)];
        for n in [10, 25, 39] {
            let (mean, se) = lag_product(&samples, n, m);
            checks += 1;
            if (mean - expect).norm() <= 3.0 * se.max(1e-12) {
                inside += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.95 * checks as f64 - 1.0, "{inside}/{checks}");
}

#[test]
fn analytic_kernel_is_hermitian_in_lag() {
    let d = DiscreteDomain::circle(17).unwrap();
    let dec = build_laplacian(&d).unwrap();
    let mut spec = filtered(d);
    spec.window = Window::Smooth { center: vec![3.0], half_width: 0.8, taper: 0.5 };
    let kern = covariance_kernel(&dec, &spec).unwrap();
    for m in 0..6i64 {
        let a = kern.operator_at(-m);
        let b = kern.operator_at(m).adjoint();
        assert!((a - b).norm() <= 1e-10 * (1.0 + kern.operator_at(m).norm()));
    }
}

#[test]
fn time_average_matches_ensemble() {
    let d = DiscreteDomain::circle(9).unwrap();
    let dec = build_laplacian(&d).unwrap();
    let spec = filtered(d);
    let kern = covariance_kernel(&dec, &spec).unwrap();
    let mode = (0..dec.len()).find(|&k| dec.eigenvalues()[k] == 1.0).unwrap();
    let mut s = NoiseStream::new(&dec, &spec, 3).unwrap();
    let mut out = vec![Complex64::new(0.0, 0.0); dec.len()];
    let series: Vec<Complex64> = (0..40_000)
        .map(|_| {
            s.next_modes(&mut out).unwrap();
            out[mode]
        })
        .collect();
    for m in 0..4 {
        let prods: Vec<Complex64> = (m..series.len()).map(|n| series[n] * series[n - m].conj()).collect();
        // Batch means absorb the short-range correlation of the products.
        let batch = 200;
        let means: Vec<Complex64> =
            prods.chunks_exact(batch).map(|c| c.iter().sum::<Complex64>() / batch as f64).collect();
        let nb = means.len() as f64;
        let mean: Complex64 = means.iter().sum::<Complex64>() / nb;
        let se = (means.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (nb - 1.0) / nb).sqrt();
        let expect = kern.operator_at(m as i64)[(mode, mode)];
        assert!((mean - expect).norm() <= 3.0 * se, "lag {m}: {mean} vs {expect} ± {se}");
    }
}

#[test]
fn noise_spec_json_round_trip() {
    let spec = filtered(DiscreteDomain::circle(9).unwrap());
    let text = serde_json::to_string(&spec).unwrap();
    let back: NoiseSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, spec);
}
