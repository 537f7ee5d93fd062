//! Hamiltonian ray flows in one space dimension: trajectories with their
//! tangent flow, action and damping integrals, two-point actions by
//! shooting, growth rates, symbol transport and the time-integrated source
//! symbol.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveguide::TabulatedHamiltonian;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hamiltonian {
    /// `ξ²`
    Free,
    /// `ξ² + w²x²`
    Harmonic { w: f64 },
    /// `ξ² + a cos x`; for `a > 0` the origin is a saddle with exponent `√(2a)`.
    Pendulum { a: f64 },
    /// `c|ξ|`
    Wave { c: f64 },
    Tabulated { table: TabulatedHamiltonian },
}

/// Imaginary part of the subprincipal symbol, always `≤ -k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DampingSymbol {
    Constant { k: f64 },
    /// `-k - amplitude·exp(-((x - center)/width)²)`
    Bump { k: f64, amplitude: f64, center: f64, width: f64 },
}

impl DampingSymbol {
    pub fn k(&self) -> f64 {
        match self {
            DampingSymbol::Constant { k } | DampingSymbol::Bump { k, .. } => *k,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            DampingSymbol::Constant { k } => -k,
            DampingSymbol::Bump { k, amplitude, center, width } => {
                let s = (x - center) / width;
                -k - amplitude * (-s * s).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
    /// Positions are identified modulo `hi - lo`.
    pub periodic: bool,
}

impl Bounds {
    pub fn line(lo: f64, hi: f64) -> Self {
        Self { lo, hi, periodic: false }
    }

    pub fn circle(lo: f64, hi: f64) -> Self {
        Self { lo, hi, periodic: true }
    }

    pub fn period(&self) -> Option<f64> {
        self.periodic.then_some(self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianField {
    pub hamiltonian: Hamiltonian,
    pub damping: DampingSymbol,
    pub bounds: Bounds,
    /// Energy interval `I`.
    pub energy: (f64, f64),
}

impl HamiltonianField {
    pub fn new(hamiltonian: Hamiltonian, damping: DampingSymbol, bounds: Bounds, energy: (f64, f64)) -> Result<Self> {
        let f = Self { hamiltonian, damping, bounds, energy };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
            return Err(Error::InvalidArgument("bounds must be finite with lo < hi".into()));
        }
        if !(self.energy.0 <= self.energy.1) || !self.energy.0.is_finite() || !self.energy.1.is_finite() {
            return Err(Error::InvalidArgument("energy interval must be finite with lo ≤ hi".into()));
        }
        match &self.damping {
            DampingSymbol::Constant { k } if *k > 0.0 => {}
            DampingSymbol::Bump { k, amplitude, width, .. } if *k > 0.0 && *amplitude >= 0.0 && *width > 0.0 => {}
            _ => return Err(Error::InvalidArgument("damping needs k > 0, amplitude ≥ 0, width > 0".into())),
        }
        match &self.hamiltonian {
            Hamiltonian::Harmonic { w } if !w.is_finite() => Err(Error::NonFinite("w".into())),
            Hamiltonian::Pendulum { a } if !a.is_finite() => Err(Error::NonFinite("a".into())),
            Hamiltonian::Wave { c } if !(*c > 0.0) => Err(Error::InvalidArgument("wave speed must be positive".into())),
            Hamiltonian::Tabulated { table } if table.xi.len() < 2 || table.x.is_empty() => {
                Err(Error::InvalidArgument("table needs at least two ξ samples".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn wrap(&self, x: f64) -> f64 {
        match self.bounds.period() {
            Some(p) => self.bounds.lo + (x - self.bounds.lo).rem_euclid(p),
            None => x,
        }
    }

    pub fn inside(&self, x: f64) -> bool {
        self.bounds.periodic || (x >= self.bounds.lo && x <= self.bounds.hi)
    }

    pub fn h0(&self, x: f64, xi: f64) -> f64 {
        match &self.hamiltonian {
            Hamiltonian::Free => xi * xi,
            Hamiltonian::Harmonic { w } => xi * xi + w * w * x * x,
            Hamiltonian::Pendulum { a } => xi * xi + a * x.cos(),
            Hamiltonian::Wave { c } => c * xi.abs(),
            Hamiltonian::Tabulated { table } => table.eval(self.wrap(x), xi).0,
        }
    }

    /// `(∂H₀/∂x, ∂H₀/∂ξ)`
    pub fn gradient(&self, x: f64, xi: f64) -> (f64, f64) {
        match &self.hamiltonian {
            Hamiltonian::Free => (0.0, 2.0 * xi),
            Hamiltonian::Harmonic { w } => (2.0 * w * w * x, 2.0 * xi),
            Hamiltonian::Pendulum { a } => (-a * x.sin(), 2.0 * xi),
            Hamiltonian::Wave { c } => (0.0, c * xi.signum()),
            Hamiltonian::Tabulated { table } => {
                let (_, dx, dxi) = table.eval(self.wrap(x), xi);
                (dx, dxi)
            }
        }
    }

    /// `(H_xx, H_xξ, H_ξξ)`
    pub fn hessian(&self, x: f64, xi: f64) -> (f64, f64, f64) {
        match &self.hamiltonian {
            Hamiltonian::Free => (0.0, 0.0, 2.0),
            Hamiltonian::Harmonic { w } => (2.0 * w * w, 0.0, 2.0),
            Hamiltonian::Pendulum { a } => (-a * x.cos(), 0.0, 2.0),
            Hamiltonian::Wave { .. } => (0.0, 0.0, 0.0),
            Hamiltonian::Tabulated { table } => table.hessian(self.wrap(x), xi),
        }
    }

    pub fn h1(&self, x: f64, _xi: f64) -> f64 {
        self.damping.eval(self.wrap(x))
    }

    /// Largest `|ξ|` on the shell `H₀ ≤ max I`, inflated by 20%.
    pub fn shell_xi_bound(&self) -> Result<f64> {
        let e = self.energy.1;
        let n = 256;
        let mut best = None::<f64>;
        for i in 0..=n {
            let x = self.bounds.lo + (self.bounds.hi - self.bounds.lo) * i as f64 / n as f64;
            if let Some(q) = self.max_xi_below(x, e) {
                best = Some(best.map_or(q, |b: f64| b.max(q)));
            }
        }
        let mut q = best.ok_or_else(|| Error::InvalidArgument("the energy shell is empty".into()))?;
        if let Hamiltonian::Tabulated { table } = &self.hamiltonian {
            q = q.min(table.xi_range().1);
        }
        Ok(1.2 * q.max(f64::MIN_POSITIVE))
    }

    fn max_xi_below(&self, x: f64, e: f64) -> Option<f64> {
        let below = |q: f64| self.h0(x, q).min(self.h0(x, -q)) <= e;
        let mut last = None;
        let mut q = 1e-3;
        while q < 1e8 {
            if below(q) {
                last = Some(q);
            } else if last.is_some() {
                break;
            }
            q *= 2.0;
        }
        let lo = last?;
        let (mut a, mut b) = (lo, 2.0 * lo);
        for _ in 0..80 {
            let c = 0.5 * (a + b);
            if below(c) {
                a = c;
            } else {
                b = c;
            }
        }
        Some(a)
    }

    /// Nonnegative `ξ` with `H₀(x, ξ) = e`, if the shell crosses `x`.
    fn shell_point(&self, x: f64, e: f64) -> Option<f64> {
        let h = |q: f64| self.h0(x, q) - e;
        if h(0.0).abs() <= 1e-14 * (1.0 + e.abs()) {
            return Some(0.0);
        }
        if h(0.0) > 0.0 {
            return None;
        }
        let mut b = 1e-3;
        while h(b) < 0.0 {
            b *= 2.0;
            if b > 1e8 {
                return None;
            }
        }
        let mut a = 0.0;
        for _ in 0..100 {
            let c = 0.5 * (a + b);
            if h(c) < 0.0 {
                a = c;
            } else {
                b = c;
            }
        }
        Some(0.5 * (a + b))
    }
}

/// Flow state `(x, ξ, M₁₁, M₁₂, M₂₁, M₂₂, S, D)`.
pub type RayState = [f64; 8];

fn rhs(field: &HamiltonianField, y: &RayState) -> RayState {
    let (x, xi) = (y[0], y[1]);
    let (hx, hxi) = field.gradient(x, xi);
    let (hxx, hxxi, hxixi) = field.hessian(x, xi);
    let a = [[hxxi, hxixi], [-hxx, -hxxi]];
    let m = [[y[2], y[3]], [y[4], y[5]]];
    let mut d = [0.0; 8];
    d[0] = hxi;
    d[1] = -hx;
    for i in 0..2 {
        for j in 0..2 {
            d[2 + 2 * i + j] = a[i][0] * m[0][j] + a[i][1] * m[1][j];
        }
    }
    d[6] = xi * hxi - field.h0(x, xi);
    d[7] = field.h1(x, xi);
    d
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RayTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<RayState>,
    #[serde(skip)]
    derivs: Vec<RayState>,
    /// Set when the ray left a non-periodic domain; the trajectory stops there.
    pub exit_time: Option<f64>,
}

impl RayTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &RayState {
        self.states.last().expect("trajectory has its initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has its initial state")
    }

    pub fn monodromy(&self, i: usize) -> [[f64; 2]; 2] {
        let s = &self.states[i];
        [[s[2], s[3]], [s[4], s[5]]]
    }

    pub fn max_symplectic_defect(&self) -> f64 {
        self.states.iter().map(|s| (s[2] * s[5] - s[3] * s[4] - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self, field: &HamiltonianField) -> f64 {
        let e0 = field.h0(self.states[0][0], self.states[0][1]);
        self.states.iter().map(|s| (field.h0(s[0], s[1]) - e0).abs()).fold(0.0, f64::max)
    }

    /// Cubic Hermite interpolation between accepted steps.
    pub fn at(&self, t: f64) -> RayState {
        let n = self.times.len();
        if n == 1 {
            return self.states[0];
        }
        let s = t.abs();
        let i = self.times.partition_point(|v| v.abs() <= s).clamp(1, n - 1);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let h = t1 - t0;
        let th = ((t - t0) / h).clamp(0.0, 1.0);
        let (y0, y1, f0, f1) = (&self.states[i - 1], &self.states[i], &self.derivs[i - 1], &self.derivs[i]);
        let mut out = [0.0; 8];
        for k in 0..8 {
            out[k] = (1.0 - th) * y0[k]
                + th * y1[k]
                + th * (th - 1.0) * ((1.0 - 2.0 * th) * (y1[k] - y0[k]) + (th - 1.0) * h * f0[k] + th * h * f1[k]);
        }
        out
    }

    /// Columns `t, x, xi, S, D`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,x,xi,S,D")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t},{},{},{},{}", s[0], s[1], s[6], s[7])?;
        }
        Ok(())
    }
}

const MAX_STEPS: usize = 2_000_000;

fn integrate(field: &HamiltonianField, y0: RayState, t_end: f64, tol: f64, stop_on_exit: bool) -> Result<RayTrajectory> {
    let mut f = rhs(field, &y0);
    let mut traj = RayTrajectory { times: vec![0.0], states: vec![y0], derivs: vec![f], exit_time: None };
    let span = t_end.abs();
    if span == 0.0 {
        return Ok(traj);
    }
    let dir = t_end.signum();
    let e0 = field.h0(y0[0], y0[1]);
    let drift_tol = tol * (1.0 + e0.abs());
    let mut y = y0;
    let mut t = 0.0;
    let mut h = span.min(0.01);
    let mut k = [[0.0; 8]; 7];
    for _ in 0..MAX_STEPS {
        if t >= span {
            return Ok(traj);
        }
        let last = h >= span - t;
        if last {
            h = span - t;
        }
        if h <= 1e-13 * (1.0 + t) {
            return Err(Error::StepUnderflow { t: dir * t });
        }
        let dt = dir * h;
        k[0] = f;
        let mut y_new = y;
        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for c in 0..8 {
                        ys[c] += dt * a * kj[c];
                    }
                }
            }
            k[s] = rhs(field, &ys);
            y_new = ys;
        }
        let mut err = 0.0;
        for c in 0..8 {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[c];
            }
            let sc = tol + tol * y[c].abs().max(y_new[c].abs());
            err += (dt * e / sc).powi(2);
        }
        let err = (err / 8.0).sqrt();
        let finite = y_new.iter().all(|v| v.is_finite());
        let drift = (field.h0(y_new[0], y_new[1]) - field.h0(y[0], y[1])).abs();
        if finite && err <= 1.0 && drift <= drift_tol {
            t = if last { span } else { t + h };
            y = y_new;
            f = k[6];
            traj.times.push(dir * t);
            traj.states.push(y);
            traj.derivs.push(f);
            if !field.inside(y[0]) {
                if stop_on_exit {
                    traj.exit_time = Some(dir * t);
                    return Ok(traj);
                }
                return Err(Error::DomainExit { t: dir * t });
            }
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= grow;
        } else if !finite {
            h *= 0.2;
        } else if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        } else {
            h *= 0.5;
        }
    }
    Err(Error::StepUnderflow { t: dir * t })
}

fn check_tol(tol: f64) -> Result<()> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} outside [1e-12, 1e-4]")));
    }
    Ok(())
}

fn initial_state(x: f64, xi: f64) -> RayState {
    [x, xi, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
}

/// Integrates the ray through `z0` for time `t_end` (negative for the
/// backward flow) with an adaptive Dormand–Prince 5(4) pair, carrying the
/// tangent flow, the action `∫ ξ dx - H₀ dt` and `D = ∫ h₁ dt`.
pub fn integrate_flow(field: &HamiltonianField, z0: (f64, f64), t_end: f64, tol: f64) -> Result<RayTrajectory> {
    check_tol(tol)?;
    if !z0.0.is_finite() || !z0.1.is_finite() || !t_end.is_finite() {
        return Err(Error::NonFinite("initial point or time".into()));
    }
    if !field.inside(z0.0) {
        return Err(Error::DomainExit { t: 0.0 });
    }
    integrate(field, initial_state(z0.0, z0.1), t_end, tol, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingOptions {
    /// Flow tolerance.
    pub tol: f64,
    /// Accepted endpoint miss.
    pub shooting_tol: f64,
    /// Initial `ξ` samples across the box.
    pub scan: usize,
    /// Overrides the shell-derived box `[-B, B]`.
    pub xi_box: Option<(f64, f64)>,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self { tol: 1e-12, shooting_tol: 1e-11, scan: 200, xi_box: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoPointRay {
    pub xi0: f64,
    pub xi_end: f64,
    pub action: f64,
    pub damping: f64,
    pub monodromy: [[f64; 2]; 2],
    /// `∂x/∂ξ₀` nearly vanishes: the endpoints are close to conjugate.
    pub conjugate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoPointSolution {
    pub rays: Vec<TwoPointRay>,
    pub xi_box: (f64, f64),
}

fn shoot(field: &HamiltonianField, y: f64, xi0: f64, t: f64, tol: f64) -> Option<RayState> {
    let tr = integrate(field, initial_state(y, xi0), t, tol, true).ok()?;
    if tr.exit_time.is_some() {
        return None;
    }
    Some(*tr.last())
}

/// All rays from `y` to `x` in time `t` with default shooting options.
pub fn action_two_point(field: &HamiltonianField, y: f64, x: f64, t: f64, shooting_tol: f64) -> Result<TwoPointSolution> {
    action_two_point_with(field, y, x, t, &ShootingOptions { shooting_tol, ..Default::default() })
}

/// Scans initial momenta for sign changes of the endpoint miss, then
/// refines each bracket with safeguarded Newton steps on `∂x/∂ξ₀`.
pub fn action_two_point_with(
    field: &HamiltonianField,
    y: f64,
    x: f64,
    t: f64,
    opts: &ShootingOptions,
) -> Result<TwoPointSolution> {
    check_tol(opts.tol)?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument("two-point time must be positive".into()));
    }
    if !(opts.shooting_tol > 0.0) || opts.scan < 2 {
        return Err(Error::InvalidArgument("shooting needs a positive tolerance and at least two samples".into()));
    }
    if !field.inside(y) {
        return Err(Error::DomainExit { t: 0.0 });
    }
    let (lo, hi) = match opts.xi_box {
        Some(b) => b,
        None => {
            let b = field.shell_xi_bound()?;
            (-b, b)
        }
    };
    let n = opts.scan;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let miss: Vec<Option<f64>> =
        grid.par_iter().map(|&q| shoot(field, y, q, t, opts.tol).map(|s| s[0] - x)).collect();
    let mut roots: Vec<f64> = Vec::new();
    for i in 0..n {
        let (Some(fa), Some(fb)) = (miss[i], miss[i + 1]) else { continue };
        if fa == 0.0 {
            roots.push(grid[i]);
            continue;
        }
        if fa * fb > 0.0 || fb == 0.0 {
            continue;
        }
        if let Some(r) = refine(field, y, x, t, grid[i], fa, grid[i + 1], fb, opts) {
            roots.push(r);
        }
    }
    if miss[n] == Some(0.0) {
        roots.push(grid[n]);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    let mut rays = Vec::with_capacity(roots.len());
    for q in roots {
        let s = integrate(field, initial_state(y, q), t, opts.tol, false)?;
        let s = *s.last();
        let m = [[s[2], s[3]], [s[4], s[5]]];
        let scale = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        rays.push(TwoPointRay {
            xi0: q,
            xi_end: s[1],
            action: s[6],
            damping: s[7],
            monodromy: m,
            conjugate: s[3].abs() < 1e-6 * scale,
        });
    }
    if rays.is_empty() {
        return Err(Error::NoSolution);
    }
    Ok(TwoPointSolution { rays, xi_box: (lo, hi) })
}

#[allow(clippy::too_many_arguments)]
fn refine(
    field: &HamiltonianField,
    y: f64,
    x: f64,
    t: f64,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    fb: f64,
    opts: &ShootingOptions,
) -> Option<f64> {
    let mut c = a - fa * (b - a) / (fb - fa);
    for _ in 0..200 {
        let s = shoot(field, y, c, t, opts.tol)?;
        let fc = s[0] - x;
        if fc.abs() <= opts.shooting_tol {
            return Some(c);
        }
        if fa * fc < 0.0 {
            b = c;
        } else {
            a = c;
            fa = fc;
        }
        if b - a <= 1e-15 * (1.0 + a.abs()) {
            return Some(c);
        }
        let newton = c - fc / s[3];
        c = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
    }
    None
}

fn nearest_ray(sol: &TwoPointSolution, xi0: f64) -> &TwoPointRay {
    sol.rays
        .iter()
        .min_by(|p, q| (p.xi0 - xi0).abs().total_cmp(&(q.xi0 - xi0).abs()))
        .expect("solutions are non-empty")
}

/// Largest of `|∂S/∂x - ξ(t)|` and `|∂S/∂y + ξ(0)|` over the rays of
/// `(y, x, t)`, with centred differences of step `h`.
pub fn generating_function_residual(
    field: &HamiltonianField,
    y: f64,
    x: f64,
    t: f64,
    h: f64,
    opts: &ShootingOptions,
) -> Result<f64> {
    let base = action_two_point_with(field, y, x, t, opts)?;
    let shifted = |yy: f64, xx: f64| action_two_point_with(field, yy, xx, t, opts);
    let (xp, xm) = (shifted(y, x + h)?, shifted(y, x - h)?);
    let (yp, ym) = (shifted(y + h, x)?, shifted(y - h, x)?);
    let mut worst = 0.0f64;
    for r in &base.rays {
        let dsdx = (nearest_ray(&xp, r.xi0).action - nearest_ray(&xm, r.xi0).action) / (2.0 * h);
        let dsdy = (nearest_ray(&yp, r.xi0).action - nearest_ray(&ym, r.xi0).action) / (2.0 * h);
        worst = worst.max((dsdx - r.xi_end).abs()).max((dsdy + r.xi0).abs());
    }
    Ok(worst)
}

/// Largest `|∂S/∂t + H₀(x, ∂S/∂x)|` over the rays of `(y, x, t)`.
pub fn hamilton_jacobi_residual(
    field: &HamiltonianField,
    y: f64,
    x: f64,
    t: f64,
    h: f64,
    opts: &ShootingOptions,
) -> Result<f64> {
    let base = action_two_point_with(field, y, x, t, opts)?;
    let (tp, tm) = (action_two_point_with(field, y, x, t + h, opts)?, action_two_point_with(field, y, x, t - h, opts)?);
    let mut worst = 0.0f64;
    for r in &base.rays {
        let dsdt = (nearest_ray(&tp, r.xi0).action - nearest_ray(&tm, r.xi0).action) / (2.0 * h);
        worst = worst.max((dsdt + field.h0(x, r.xi_end)).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WkbRay {
    /// Image index on the line cover of a periodic domain.
    pub winding: i64,
    pub xi0: f64,
    pub action: f64,
    /// `S/ε mod 2π`
    pub phase: f64,
    /// `(2πε)^{-1/2} |∂x/∂ξ₀|^{-1/2} e^{D}`
    pub amplitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WkbPrediction {
    pub rays: Vec<WkbRay>,
    /// Index of the ray with the largest amplitude.
    pub dominant: usize,
}

/// Phases and amplitudes of the ray contributions to the propagator from
/// `y` to `x` at time `tau`; periodic domains add the images `x + nL`,
/// `|n| ≤ images`.
pub fn wkb_phase_predict(
    field: &HamiltonianField,
    y: f64,
    x: f64,
    tau: f64,
    eps: f64,
    images: u32,
    opts: &ShootingOptions,
) -> Result<WkbPrediction> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("ε must be positive".into()));
    }
    let windings: Vec<i64> = match field.bounds.period() {
        Some(_) => (-(images as i64)..=images as i64).collect(),
        None => vec![0],
    };
    let period = field.bounds.period().unwrap_or(0.0);
    let mut rays = Vec::new();
    for n in windings {
        let sol = match action_two_point_with(field, y, x + n as f64 * period, tau, opts) {
            Ok(s) => s,
            Err(Error::NoSolution) => continue,
            Err(e) => return Err(e),
        };
        for r in sol.rays {
            if r.conjugate {
                return Err(Error::Conjugate);
            }
            let two_pi = 2.0 * std::f64::consts::PI;
            rays.push(WkbRay {
                winding: n,
                xi0: r.xi0,
                action: r.action,
                phase: (r.action / eps).rem_euclid(two_pi),
                amplitude: (two_pi * eps).powf(-0.5) * r.monodromy[0][1].abs().powf(-0.5) * r.damping.exp(),
            });
        }
    }
    if rays.is_empty() {
        return Err(Error::NoSolution);
    }
    let dominant = (0..rays.len()).max_by(|&i, &j| rays[i].amplitude.total_cmp(&rays[j].amplitude)).unwrap();
    Ok(WkbPrediction { rays, dominant })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    /// Positions sampled across the domain.
    pub positions: usize,
    /// Energies sampled across `I`.
    pub energies: usize,
    /// Renormalization interval for the tangent flow.
    pub segment: f64,
    pub tol: f64,
    pub safety: f64,
    pub gamma: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self { positions: 32, energies: 3, segment: 1.0, tol: 1e-9, safety: 1.1, gamma: 0.25 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Largest fitted growth rate over the samples.
    pub fitted: f64,
    /// `fitted × safety`.
    pub lambda: f64,
    /// Goodness of the linear fit that produced `fitted`.
    pub r2: f64,
    /// Some sample grows exponentially rather than polynomially.
    pub hyperbolic: bool,
    /// `r2 ≥ 0.9`; otherwise `lambda` is only an upper bound.
    pub converged: bool,
    pub samples: usize,
    pub epsilon: f64,
    pub t_ehrenfest: f64,
    pub gamma: f64,
    pub t_gamma: f64,
}

pub fn ehrenfest_time(eps: f64, lambda: f64) -> f64 {
    if lambda > 0.0 {
        eps.ln().abs() / lambda
    } else {
        f64::INFINITY
    }
}

pub fn gamma_time(t_ehrenfest: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::InvalidArgument(format!("γ = {gamma} outside (0, 1/2)")));
    }
    Ok((0.5 - gamma) * t_ehrenfest)
}

struct Fit {
    slope: f64,
    r2: f64,
    sse: f64,
}

fn fit(x: &[f64], y: &[f64]) -> Fit {
    let (c, slope, r2) = crate::util::linear_fit(x, y);
    let sse = x.iter().zip(y).map(|(a, b)| (b - c - slope * a).powi(2)).sum();
    Fit { slope, r2, sse }
}

/// `(t_k, log ‖dΦ_{t_k}‖)` with the tangent flow renormalized each segment.
fn growth_curve(field: &HamiltonianField, z: (f64, f64), horizon: f64, opts: &LyapunovOptions) -> Vec<(f64, f64)> {
    let mut y = initial_state(z.0, z.1);
    let mut log_norm = 0.0;
    let mut t = 0.0;
    let mut out = Vec::new();
    while t < horizon - 1e-12 {
        let step = opts.segment.min(horizon - t);
        let Ok(tr) = integrate(field, y, step, opts.tol, true) else { break };
        if tr.exit_time.is_some() {
            break;
        }
        y = *tr.last();
        y[6] = 0.0;
        y[7] = 0.0;
        let norm = (y[2] * y[2] + y[3] * y[3] + y[4] * y[4] + y[5] * y[5]).sqrt();
        for v in &mut y[2..6] {
            *v /= norm;
        }
        log_norm += norm.ln();
        t += step;
        out.push((t, log_norm));
    }
    out
}

/// Finite-time growth rate of the tangent flow sampled over the shell
/// `H₀⁻¹(I)`: each sample's `log ‖dΦ_t‖` over the second half of the
/// horizon is fitted both linearly in `t` and in `log t`; samples where the
/// linear fit wins count as exponentially growing.
pub fn lyapunov_and_ehrenfest(
    field: &HamiltonianField,
    horizon: f64,
    eps: f64,
    opts: &LyapunovOptions,
) -> Result<LyapunovReport> {
    check_tol(opts.tol)?;
    if !(horizon > 0.0) || !(opts.segment > 0.0) || horizon < 8.0 * opts.segment {
        return Err(Error::InvalidArgument("horizon must cover at least eight segments".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument("ε must lie in (0, 1)".into()));
    }
    let (elo, ehi) = field.energy;
    let ne = if elo == ehi { 1 } else { opts.energies.max(2) };
    let np = opts.positions.max(1);
    let b = field.bounds;
    let mut starts = Vec::new();
    for j in 0..ne {
        let e = if ne == 1 { elo } else { elo + (ehi - elo) * j as f64 / (ne - 1) as f64 };
        for i in 0..np {
            let x = if b.periodic {
                b.lo + (b.hi - b.lo) * i as f64 / np as f64
            } else {
                b.lo + (b.hi - b.lo) * (i as f64 + 0.5) / np as f64
            };
            if let Some(q) = field.shell_point(x, e) {
                starts.push((x, q));
                if q > 0.0 {
                    starts.push((x, -q));
                }
            }
        }
    }
    if starts.is_empty() {
        return Err(Error::InvalidArgument("no sample points on the energy shell".into()));
    }
    let fits: Vec<Option<(Fit, bool)>> = starts
        .par_iter()
        .map(|&z| {
            let curve = growth_curve(field, z, horizon, opts);
            if curve.len() < 8 {
                return None;
            }
            let tail = &curve[curve.len() / 2..];
            let t: Vec<f64> = tail.iter().map(|p| p.0).collect();
            let l: Vec<f64> = tail.iter().map(|p| p.1).collect();
            let lin = fit(&t, &l);
            let logt: Vec<f64> = t.iter().map(|v| v.ln()).collect();
            let pow = fit(&logt, &l);
            let exponential = lin.slope > 0.0 && lin.sse < pow.sse;
            Some((lin, exponential))
        })
        .collect();
    let usable: Vec<&(Fit, bool)> = fits.iter().flatten().collect();
    if usable.is_empty() {
        return Err(Error::InvalidArgument("every sample left the domain".into()));
    }
    let hyperbolic = usable.iter().any(|f| f.1);
    let best = usable
        .iter()
        .filter(|f| f.1 || !hyperbolic)
        .max_by(|a, b| a.0.slope.total_cmp(&b.0.slope))
        .unwrap();
    let fitted = best.0.slope.max(0.0);
    let lambda = fitted * opts.safety;
    let t_e = if hyperbolic { ehrenfest_time(eps, lambda) } else { f64::INFINITY };
    Ok(LyapunovReport {
        fitted,
        lambda,
        r2: best.0.r2,
        hyperbolic,
        converged: best.0.r2 >= 0.9,
        samples: usable.len(),
        epsilon: eps,
        t_ehrenfest: t_e,
        gamma: opts.gamma,
        t_gamma: gamma_time(t_e, opts.gamma)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x: (f64, f64, usize),
    pub xi: (f64, f64, usize),
}

impl PhaseGrid {
    pub fn len(&self) -> usize {
        self.x.2 * self.xi.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis(a: (f64, f64, usize), i: usize) -> f64 {
        if a.2 <= 1 {
            a.0
        } else {
            a.0 + (a.1 - a.0) * i as f64 / (a.2 - 1) as f64
        }
    }

    /// Node `i` in row-major `(x, ξ)` order.
    pub fn node(&self, i: usize) -> (f64, f64) {
        (Self::axis(self.x, i / self.xi.2), Self::axis(self.xi, i % self.xi.2))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymbolGrid {
    pub grid: PhaseGrid,
    pub values: Vec<f64>,
    /// Nodes whose flow or quadrature failed; their values are NaN.
    pub failed: Vec<usize>,
}

impl SymbolGrid {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().filter(|v| v.is_finite()).map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Columns `x, xi, value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x,xi,value")?;
        for (i, v) in self.values.iter().enumerate() {
            let (x, xi) = self.grid.node(i);
            writeln!(w, "{x},{xi},{v}")?;
        }
        Ok(())
    }
}

fn collect_grid(grid: PhaseGrid, results: Vec<Result<f64>>) -> SymbolGrid {
    let mut failed = Vec::new();
    let values = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.unwrap_or_else(|_| {
                failed.push(i);
                f64::NAN
            })
        })
        .collect();
    SymbolGrid { grid, values, failed }
}

/// `a₀(t)(z) = exp(2∫_{-t}^0 h₁(Φ_s z) ds) a(Φ_{-t} z)`; zero when the
/// backward ray leaves the domain.
pub fn egorov_point(
    field: &HamiltonianField,
    a: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    z: (f64, f64),
    tol: f64,
) -> Result<f64> {
    check_tol(tol)?;
    if t < 0.0 {
        return Err(Error::InvalidArgument("transport time must be nonnegative".into()));
    }
    if !field.inside(z.0) {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(a(z.0, z.1));
    }
    let tr = integrate(field, initial_state(z.0, z.1), -t, tol, true)?;
    if tr.exit_time.is_some() {
        return Ok(0.0);
    }
    let s = tr.last();
    Ok((-2.0 * s[7]).exp() * a(field.wrap(s[0]), s[1]))
}

pub fn egorov_transport(
    field: &HamiltonianField,
    a: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    grid: PhaseGrid,
    tol: f64,
) -> Result<SymbolGrid> {
    check_tol(tol)?;
    if t < 0.0 {
        return Err(Error::InvalidArgument("transport time must be nonnegative".into()));
    }
    let results = (0..grid.len()).into_par_iter().map(|i| egorov_point(field, a, t, grid.node(i), tol)).collect();
    Ok(collect_grid(grid, results))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiOptions {
    /// Absolute quadrature tolerance per node.
    pub tol: f64,
    pub flow_tol: f64,
    /// Initial panels over `[0, T]`.
    pub panels: usize,
}

impl Default for PiOptions {
    fn default() -> Self {
        Self { tol: 1e-8, flow_tol: 1e-10, panels: 64 }
    }
}

/// Returns the panel integral and the residual left in panels that hit the
/// depth limit.
fn simpson_panel(
    g: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<(f64, f64)> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (g(lm)?, g(rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok((left + right, 0.0));
    }
    if depth == 0 {
        return Ok((left + right, delta.abs()));
    }
    let (l, el) = simpson_panel(g, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
    let (r, er) = simpson_panel(g, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
    Ok((l + r, el + er))
}

fn adaptive_simpson(g: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, panels: usize, tol: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let panels = panels.max(1);
    let w = (b - a) / panels as f64;
    let mut total = 0.0;
    let mut unresolved = 0.0;
    let mut fa = g(a)?;
    for p in 0..panels {
        let lo = a + w * p as f64;
        let hi = if p + 1 == panels { b } else { lo + w };
        let m = 0.5 * (lo + hi);
        let (fm, fb) = (g(m)?, g(hi)?);
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        let (v, e) = simpson_panel(g, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)?;
        total += v;
        unresolved += e;
        fa = fb;
    }
    if unresolved > tol {
        return Err(Error::Quadrature(format!("unresolved residual {unresolved:.2e} on [{a}, {b}]")));
    }
    Ok(total)
}

/// `π(z) = ∫₀^T exp(2∫_{-t}^0 h₁(Φ_s z) ds) |l|²(Φ_{-t} z, -H₀(z)) dt`
/// along the backward ray through `z`.
pub fn pi_point(
    field: &HamiltonianField,
    l2: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    t_gamma: f64,
    z: (f64, f64),
    opts: &PiOptions,
) -> Result<f64> {
    if !(t_gamma >= 0.0 && t_gamma.is_finite()) {
        return Err(Error::InvalidArgument("T must be finite and nonnegative".into()));
    }
    if !field.inside(z.0) {
        return Ok(0.0);
    }
    let omega = -field.h0(z.0, z.1);
    let tr = integrate(field, initial_state(z.0, z.1), -t_gamma, opts.flow_tol, true)?;
    let end = tr.exit_time.map_or(t_gamma, f64::abs);
    let g = |t: f64| -> Result<f64> {
        let s = tr.at(-t);
        let v = l2(field.wrap(s[0]), s[1], omega);
        if v < 0.0 || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("source symbol {v} is not a nonnegative number")));
        }
        Ok(if v == 0.0 { 0.0 } else { (-2.0 * s[7]).exp() * v })
    };
    adaptive_simpson(&g, 0.0, end, opts.panels, opts.tol)
}

pub fn pi_symbol(
    field: &HamiltonianField,
    l2: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    t_gamma: f64,
    grid: PhaseGrid,
    opts: &PiOptions,
) -> Result<SymbolGrid> {
    check_tol(opts.flow_tol)?;
    if !(t_gamma >= 0.0 && t_gamma.is_finite()) {
        return Err(Error::InvalidArgument("T must be finite and nonnegative".into()));
    }
    let results = (0..grid.len()).into_par_iter().map(|i| pi_point(field, l2, t_gamma, grid.node(i), opts)).collect();
    Ok(collect_grid(grid, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn free() -> HamiltonianField {
        HamiltonianField::new(Hamiltonian::Free, DampingSymbol::Constant { k: 0.5 }, Bounds::line(-50.0, 50.0), (0.5, 2.0))
            .unwrap()
    }

    fn oscillator() -> HamiltonianField {
        HamiltonianField::new(
            Hamiltonian::Harmonic { w: 1.0 },
            DampingSymbol::Constant { k: 0.3 },
            Bounds::line(-10.0, 10.0),
            (0.5, 2.0),
        )
        .unwrap()
    }

    #[test]
    fn free_ray_is_straight() {
        let tr = integrate_flow(&free(), (0.0, 1.0), 2.0, 1e-10).unwrap();
        let s = tr.last();
        assert!((s[0] - 4.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-15);
        assert!((s[6] - 2.0).abs() < 1e-12);
        assert!((s[7] + 1.0).abs() < 1e-12);
        assert!((s[3] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn oscillator_returns_after_its_period() {
        let tr = integrate_flow(&oscillator(), (1.0, 0.0), PI, 1e-10).unwrap();
        let s = tr.last();
        assert!((s[0] - 1.0).abs() < 1e-8 && s[1].abs() < 1e-8, "{s:?}");
        assert!(tr.max_symplectic_defect() < 1e-8);
    }

    #[test]
    fn domain_exit_is_signalled() {
        let f = HamiltonianField { bounds: Bounds::line(-1.0, 1.0), ..free() };
        assert!(matches!(integrate_flow(&f, (0.0, 1.0), 2.0, 1e-8), Err(Error::DomainExit { .. })));
    }

    #[test]
    fn tolerance_range_is_enforced() {
        assert!(integrate_flow(&free(), (0.0, 1.0), 1.0, 1e-3).is_err());
        assert!(integrate_flow(&free(), (0.0, 1.0), 1.0, 1e-13).is_err());
    }

    #[test]
    fn hermite_interpolation_is_accurate() {
        let tr = integrate_flow(&oscillator(), (1.0, 0.0), -2.0, 1e-11).unwrap();
        let s = tr.at(-1.234);
        assert!((s[0] - (2.0f64 * 1.234).cos()).abs() < 1e-8);
    }

    #[test]
    fn free_action_and_half_period_conjugacy() {
        let sol = action_two_point(&free(), 0.3, 1.7, 0.9, 1e-12).unwrap();
        assert_eq!(sol.rays.len(), 1);
        let r = &sol.rays[0];
        assert!((r.action - 1.4f64.powi(2) / 3.6).abs() < 1e-10);
        assert!(!r.conjugate);
        // Every ray from y is back at -y after half a period.
        let t = PI / 2.0 + 1e-9;
        let y = 0.4;
        let x = y * (2.0 * t).cos() + 0.5 * (2.0 * t).sin();
        let sol = action_two_point(&oscillator(), y, x, t, 1e-14).unwrap();
        assert!(sol.rays.iter().all(|r| r.conjugate));
    }

    #[test]
    fn ehrenfest_formula() {
        assert!((ehrenfest_time(1e-3, 1.0) - 1000f64.ln()).abs() < 1e-15);
        assert!((gamma_time(4.0, 0.25).unwrap() - 1.0).abs() < 1e-15);
        assert!(gamma_time(1.0, 0.5).is_err());
        assert_eq!(ehrenfest_time(0.1, 0.0), f64::INFINITY);
    }

    #[test]
    fn simpson_integrates_exponential() {
        let g = |t: f64| -> Result<f64> { Ok((-t).exp()) };
        let v = adaptive_simpson(&g, 0.0, 3.0, 4, 1e-12).unwrap();
        assert!((v - (1.0 - (-3.0f64).exp())).abs() < 1e-11);
    }
}
