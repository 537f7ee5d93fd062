use corrlab_core::rays::*;
use corrlab_core::waveguide::{dispersion_table, effective_hamiltonian_export, DispersionOptions, VelocityProfile};
use corrlab_core::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn field(h: Hamiltonian, damping: DampingSymbol, bounds: Bounds, energy: (f64, f64)) -> HamiltonianField {
    HamiltonianField::new(h, damping, bounds, energy).unwrap()
}

fn oscillator(k: f64) -> HamiltonianField {
    field(Hamiltonian::Harmonic { w: 1.0 }, DampingSymbol::Constant { k }, Bounds::line(-10.0, 10.0), (0.5, 2.0))
}

fn pendulum() -> HamiltonianField {
    field(
        Hamiltonian::Pendulum { a: 1.0 },
        DampingSymbol::Bump { k: 0.2, amplitude: 0.5, center: 0.5, width: 0.7 },
        Bounds::circle(-PI, PI),
        (0.5, 2.0),
    )
}

fn free_circle() -> HamiltonianField {
    field(Hamiltonian::Free, DampingSymbol::Constant { k: 0.1 }, Bounds::circle(0.0, 2.0 * PI), (0.5, 2.0))
}

#[test]
fn analytic_gradients_match_differences() {
    let fields = [oscillator(0.1), pendulum(), free_circle()];
    let h = 1e-6;
    for f in &fields {
        for &(x, xi) in &[(0.3, -0.7), (1.1, 0.4), (-2.0, 1.3)] {
            let (gx, gxi) = f.gradient(x, xi);
            let fx = (f.h0(x + h, xi) - f.h0(x - h, xi)) / (2.0 * h);
            let fxi = (f.h0(x, xi + h) - f.h0(x, xi - h)) / (2.0 * h);
            assert!((gx - fx).abs() <= 1e-5 * (1.0 + gx.abs()));
            assert!((gxi - fxi).abs() <= 1e-5 * (1.0 + gxi.abs()));
            let (hxx, hxxi, hxixi) = f.hessian(x, xi);
            let g = |x: f64, xi: f64| f.gradient(x, xi);
            assert!((hxx - (g(x + h, xi).0 - g(x - h, xi).0) / (2.0 * h)).abs() < 1e-5);
            assert!((hxxi - (g(x, xi + h).0 - g(x, xi - h).0) / (2.0 * h)).abs() < 1e-5);
            assert!((hxixi - (g(x, xi + h).1 - g(x, xi - h).1) / (2.0 * h)).abs() < 1e-5);
        }
    }
}

#[test]
fn energy_drift_over_long_times() {
    let f = pendulum();
    let tr = integrate_flow(&f, (1.0, 0.5), 100.0, 1e-10).unwrap();
    assert!(tr.max_energy_drift(&f) <= 1e-8, "{}", tr.max_energy_drift(&f));
    assert!(tr.max_symplectic_defect() <= 1e-8);
}

#[test]
fn trajectory_csv_has_five_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ray.csv");
    integrate_flow(&pendulum(), (0.2, 0.3), 2.0, 1e-8).unwrap().write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("t,x,xi,S,D\n"));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 5));
}

#[test]
fn tabulated_waveguide_hamiltonian_flows_symplectically() {
    let well = VelocityProfile::square_well(0.5, 1.0, -1.0).unwrap();
    let xis: Vec<f64> = (0..12).map(|i| 3.0 + i as f64).collect();
    let opts = DispersionOptions::default();
    let tables: Vec<_> = [0.0, 5.0].iter().map(|&x| dispersion_table(&well, x, &xis, &opts).unwrap()).collect();
    let table = effective_hamiltonian_export(&tables, 0).unwrap();
    let f = field(Hamiltonian::Tabulated { table }, DampingSymbol::Constant { k: 0.1 }, Bounds::line(-100.0, 100.0), (3.0, 6.0));
    let tr = integrate_flow(&f, (0.0, 6.0), 10.0, 1e-10).unwrap();
    assert!(tr.max_symplectic_defect() <= 1e-8);
    assert!(tr.max_energy_drift(&f) <= 1e-8);
    let b = f.shell_xi_bound().unwrap();
    assert!(b > 6.0 && b <= 1.2 * 14.0 + 1e-12);
}

#[test]
fn free_two_point_action() {
    let f = field(Hamiltonian::Free, DampingSymbol::Constant { k: 0.1 }, Bounds::line(-20.0, 20.0), (0.0, 4.0));
    for &(y, x, t) in &[(0.0, 1.0, 0.5), (-1.0, 2.5, 1.5), (3.0, 2.0, 0.25)] {
        let sol = action_two_point(&f, y, x, t, 1e-12).unwrap();
        let exact = (x - y) * (x - y) / (4.0 * t);
        assert_eq!(sol.rays.len(), 1);
        assert!((sol.rays[0].action - exact).abs() < 1e-10, "{} {exact}", sol.rays[0].action);
    }
}

#[test]
fn two_point_outside_box_has_no_solution() {
    let f = field(Hamiltonian::Free, DampingSymbol::Constant { k: 0.1 }, Bounds::line(-20.0, 20.0), (0.0, 1.0));
    assert!(matches!(action_two_point(&f, 0.0, 10.0, 1.0, 1e-10), Err(Error::NoSolution)));
}

#[test]
fn generating_function_and_hamilton_jacobi() {
    let f = pendulum();
    let opts = ShootingOptions::default();
    let g = generating_function_residual(&f, 0.2, 1.0, 0.8, 1e-4, &opts).unwrap();
    assert!(g < 1e-6, "{g}");
    let hj = hamilton_jacobi_residual(&f, 0.2, 1.0, 0.8, 1e-4, &opts).unwrap();
    assert!(hj < 1e-5, "{hj}");
}

#[test]
fn conjugate_points_of_the_oscillator() {
    // With ω = 2 the period is π and ∂x/∂ξ₀ = sin 2t first vanishes at π/2.
    let f = oscillator(0.1);
    let t = PI / 2.0 + 1e-9;
    let y = 0.4;
    let x = y * (2.0 * t).cos() + 0.5 * (2.0 * t).sin();
    let sol = action_two_point(&f, y, x, t, 1e-14).unwrap();
    assert!(sol.rays.iter().all(|r| r.conjugate));
    let opts = ShootingOptions { shooting_tol: 1e-14, ..Default::default() };
    assert!(matches!(wkb_phase_predict(&f, y, x, t, 0.1, 0, &opts), Err(Error::Conjugate)));
    let away = action_two_point(&f, y, 0.3, PI / 4.0, 1e-12).unwrap();
    assert!(away.rays.iter().all(|r| !r.conjugate));
}

#[test]
fn free_images_on_the_circle() {
    let f = free_circle();
    let (y, x, tau, eps) = (0.5, 2.0, 1.0, 0.05);
    let opts = ShootingOptions { xi_box: Some((-10.0, 10.0)), ..Default::default() };
    let p = wkb_phase_predict(&f, y, x, tau, eps, 2, &opts).unwrap();
    assert_eq!(p.rays.len(), 5);
    for r in &p.rays {
        let d = x + 2.0 * PI * r.winding as f64 - y;
        let phase = (d * d / (4.0 * tau * eps)).rem_euclid(2.0 * PI);
        let diff = (r.phase - phase).abs();
        assert!(diff.min(2.0 * PI - diff) < 1e-8, "{r:?}");
    }
    assert_eq!(p.rays[p.dominant].amplitude, p.rays.iter().map(|r| r.amplitude).fold(0.0, f64::max));
}

#[test]
fn free_flow_is_not_hyperbolic() {
    let r = lyapunov_and_ehrenfest(&free_circle(), 200.0, 1e-3, &LyapunovOptions::default()).unwrap();
    assert!(!r.hyperbolic);
    assert!(r.fitted < 0.02, "{r:?}");
    assert!(r.t_ehrenfest.is_infinite());
}

#[test]
fn inverted_well_growth_matches_saddle() {
    let f = field(Hamiltonian::Pendulum { a: 1.0 }, DampingSymbol::Constant { k: 0.1 }, Bounds::circle(-PI, PI), (0.9, 1.1));
    let r = lyapunov_and_ehrenfest(&f, 60.0, 1e-3, &LyapunovOptions::default()).unwrap();
    let saddle = 2f64.sqrt();
    assert!(r.hyperbolic && r.converged);
    assert!((r.fitted - saddle).abs() <= 0.15 * saddle, "{r:?}");
    assert!((r.lambda - 1.1 * r.fitted).abs() < 1e-12);
    assert!((r.t_ehrenfest - 1000f64.ln() / r.lambda).abs() < 1e-12);
    assert!((r.t_gamma - 0.25 * r.t_ehrenfest).abs() < 1e-12);
}

#[test]
fn ehrenfest_time_example() {
    assert!((ehrenfest_time(1e-3, 1.0) - 6.907755278982137).abs() < 1e-12);
}

fn radial(f: &HamiltonianField) -> impl Fn(f64, f64) -> f64 + Sync + '_ {
    move |x, xi| (-(f.h0(x, xi) - 1.0).powi(2) * 4.0).exp()
}

#[test]
fn egorov_identity_and_constant_damping() {
    let f = oscillator(0.3);
    let a = radial(&f);
    let grid = PhaseGrid { x: (-1.5, 1.5, 9), xi: (-1.5, 1.5, 9) };
    let a0 = egorov_transport(&f, &a, 0.0, grid, 1e-10).unwrap();
    for (i, v) in a0.values.iter().enumerate() {
        let (x, xi) = grid.node(i);
        assert_eq!(*v, a(x, xi));
    }
    let t = 1.7;
    let at = egorov_transport(&f, &a, t, grid, 1e-11).unwrap();
    let factor = (-2.0 * 0.3 * t).exp();
    for (i, v) in at.values.iter().enumerate() {
        let (x, xi) = grid.node(i);
        assert!((v - factor * a(x, xi)).abs() < 1e-8);
    }
    assert!((at.max_abs() - factor * a0.max_abs()).abs() < 1e-8);
}

#[test]
fn free_transport_translates_support() {
    let f = field(Hamiltonian::Free, DampingSymbol::Constant { k: 0.2 }, Bounds::line(-10.0, 10.0), (0.0, 4.0));
    let (xs, ks) = (-1.0, 0.8);
    let a = move |x: f64, xi: f64| (-((x - xs).powi(2) + (xi - ks).powi(2)) * 8.0).exp();
    let t = 1.5;
    let grid = PhaseGrid { x: (-2.0, 3.0, 51), xi: (0.0, 1.6, 17) };
    let g = egorov_transport(&f, &a, t, grid, 1e-10).unwrap();
    let best = (0..g.values.len()).max_by(|&i, &j| g.values[i].total_cmp(&g.values[j])).unwrap();
    let (x, xi) = grid.node(best);
    assert!((x - (xs + 2.0 * ks * t)).abs() < 1e-9 && (xi - ks).abs() < 1e-9, "{x} {xi}");
    for (i, v) in g.values.iter().enumerate() {
        let (x, xi) = grid.node(i);
        assert!((v - (-0.4 * t).exp() * a(x - 2.0 * xi * t, xi)).abs() < 1e-9);
    }
}

#[test]
fn egorov_nodes_leaving_the_domain_vanish() {
    let f = field(Hamiltonian::Free, DampingSymbol::Constant { k: 0.2 }, Bounds::line(-1.0, 1.0), (0.0, 4.0));
    let v = egorov_point(&f, &|_, _| 1.0, 2.0, (0.5, 1.0), 1e-10).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn pi_symbol_closed_form_and_zeros() {
    let k = 0.3;
    let c = 2.5;
    let f = oscillator(k);
    let l2 = move |x: f64, xi: f64, _w: f64| {
        let e = xi * xi + x * x;
        if (0.8..=1.2).contains(&e) {
            c
        } else {
            0.0
        }
    };
    let tg = 3.0;
    let grid = PhaseGrid { x: (-1.4, 1.4, 8), xi: (-1.4, 1.4, 8) };
    let pi = pi_symbol(&f, &l2, tg, grid, &PiOptions::default()).unwrap();
    let exact = c * (1.0 - (-2.0 * k * tg).exp()) / (2.0 * k);
    assert!(pi.failed.is_empty());
    let mut on = 0;
    for (i, v) in pi.values.iter().enumerate() {
        let (x, xi) = grid.node(i);
        let e = x * x + xi * xi;
        assert!(*v >= 0.0);
        if (0.85..=1.15).contains(&e) {
            on += 1;
            assert!((v - exact).abs() < 1e-6, "{v} {exact}");
        } else if !(0.75..=1.25).contains(&e) {
            assert_eq!(*v, 0.0);
        }
    }
    assert!(on > 0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pi.csv");
    pi.write_csv(&p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 65);
}

#[test]
fn pi_symbol_rejects_negative_sources() {
    let f = oscillator(0.3);
    let r = pi_point(&f, &|_, _, _| -1.0, 1.0, (0.5, 0.5), &PiOptions::default());
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn monodromy_stays_symplectic(x in -3.0..3.0f64, xi in -1.5..1.5f64, t in 0.5..10.0f64) {
        let tr = integrate_flow(&pendulum(), (x, xi), t, 1e-10).unwrap();
        prop_assert!(tr.max_symplectic_defect() <= 1e-8);
    }

    #[test]
    fn time_reversal_for_even_hamiltonians(x in -3.0..3.0f64, xi in -1.5..1.5f64, t in 0.1..5.0f64) {
        let f = pendulum();
        let back = *integrate_flow(&f, (x, xi), -t, 1e-11).unwrap().last();
        let fwd = *integrate_flow(&f, (x, -xi), t, 1e-11).unwrap().last();
        prop_assert!((back[0] - fwd[0]).abs() < 1e-8);
        prop_assert!((back[1] + fwd[1]).abs() < 1e-8);
    }

    #[test]
    fn egorov_composes(x in -2.0..2.0f64, xi in -1.2..1.2f64, s in 0.1..1.5f64, t in 0.1..1.5f64) {
        let f = pendulum();
        let tol = 1e-10;
        let a = |x: f64, xi: f64| (-(x - 0.3).powi(2) - xi * xi).exp();
        let direct = egorov_point(&f, &a, s + t, (x, xi), tol).unwrap();
        let inner = |x: f64, xi: f64| egorov_point(&f, &a, s, (x, xi), tol).unwrap();
        let composed = egorov_point(&f, &inner, t, (x, xi), tol).unwrap();
        prop_assert!((direct - composed).abs() <= 2e-8, "{} {}", direct, composed);
    }

    #[test]
    fn pi_grows_with_time(x in -1.5..1.5f64, xi in -1.5..1.5f64, t1 in 0.2..2.0f64, dt in 0.0..2.0f64) {
        let f = pendulum();
        let l2 = |x: f64, xi: f64, _w: f64| (-(x - 1.0).powi(2) * 3.0 - xi * xi).exp();
        let opts = PiOptions::default();
        let a = pi_point(&f, &l2, t1, (x, xi), &opts).unwrap();
        let b = pi_point(&f, &l2, t1 + dt, (x, xi), &opts).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a - 2.0 * opts.tol);
    }
}
