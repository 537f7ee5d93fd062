//! Trapped surface-wave modes of a vertically layered half-space.
//!
//! For a profile `N(x, Z)`, `Z ≤ 0`, the vertical operator
//! `L v = -(N v')' + N |ξ|² v` with `v'(0) = 0` has discrete eigenvalues in
//! `(N₀|ξ|², N_∞|ξ|²)`. The half-line is truncated at `Z_bot` with a
//! Dirichlet condition and discretized in flux form on a uniform grid.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues within this fraction of the continuum edge are dropped.
pub const THRESHOLD_MARGIN: f64 = 1e-3;
/// Allowed eigenvector mass in the bottom tenth of the deep layer.
pub const DECAY_TOLERANCE: f64 = 1e-8;

/// Piecewise-linear `N(Z)` at one horizontal position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileColumn {
    pub x: f64,
    /// Knot depths, descending from the surface (`z[0] = 0`).
    pub z: Vec<f64>,
    pub n: Vec<f64>,
}

impl ProfileColumn {
    fn eval(&self, z: f64, z0: f64, n_inf: f64) -> f64 {
        if z <= z0 {
            return n_inf;
        }
        let k = self.z.len();
        if z >= self.z[0] {
            return self.n[0];
        }
        if z <= self.z[k - 1] {
            return self.n[k - 1];
        }
        // First knot at or below z.
        let i = self.z.partition_point(|&v| v > z);
        let (za, zb) = (self.z[i - 1], self.z[i]);
        if za == zb {
            return self.n[i];
        }
        let w = (za - z) / (za - zb);
        self.n[i - 1] * (1.0 - w) + self.n[i] * w
    }
}

/// Layered profile: `N = N_∞` below `Z₀`, linear interpolation in `x`
/// between columns (clamped outside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub columns: Vec<ProfileColumn>,
    pub n_inf: f64,
    pub z0: f64,
}

impl VelocityProfile {
    /// `N = n0` on `(z0, 0]` and `n_inf` below, at every `x`.
    pub fn square_well(n0: f64, n_inf: f64, z0: f64) -> Result<Self> {
        let p = Self { columns: vec![ProfileColumn { x: 0.0, z: vec![0.0, z0], n: vec![n0, n0] }], n_inf, z0 };
        p.validate()?;
        Ok(p)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_inf > 0.0) || !(self.z0 < 0.0) {
            return Err(Error::InvalidArgument("need N_inf > 0 and Z0 < 0".into()));
        }
        if self.columns.is_empty() {
            return Err(Error::InvalidArgument("profile has no columns".into()));
        }
        if self.columns.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(Error::InvalidArgument("columns must be sorted by x".into()));
        }
        for c in &self.columns {
            if c.z.len() != c.n.len() || c.z.is_empty() {
                return Err(Error::InvalidArgument("column knots and values differ in length".into()));
            }
            if c.z[0] != 0.0 || c.z.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidArgument("knots must descend from Z = 0".into()));
            }
            if c.n.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument("N must be positive".into()));
            }
        }
        Ok(())
    }

    fn column_at(&self, x: f64) -> (usize, usize, f64) {
        let c = &self.columns;
        if c.len() == 1 || x <= c[0].x {
            return (0, 0, 0.0);
        }
        if x >= c[c.len() - 1].x {
            return (c.len() - 1, c.len() - 1, 0.0);
        }
        let i = c.partition_point(|col| col.x <= x);
        (i - 1, i, (x - c[i - 1].x) / (c[i].x - c[i - 1].x))
    }

    pub fn eval(&self, x: f64, z: f64) -> f64 {
        let (i, j, w) = self.column_at(x);
        let a = self.columns[i].eval(z, self.z0, self.n_inf);
        if i == j {
            return a;
        }
        a * (1.0 - w) + self.columns[j].eval(z, self.z0, self.n_inf) * w
    }

    /// `N₀(x) = min_Z N(x, Z)`, attained at a knot or below `Z₀`.
    pub fn n0(&self, x: f64) -> f64 {
        let (i, j, _) = self.column_at(x);
        let mut zs: Vec<f64> = self.columns[i].z.iter().chain(&self.columns[j].z).copied().collect();
        zs.push(self.z0 - 1.0);
        zs.iter()
            .flat_map(|&z| [z, z - 1e-12, z + 1e-12])
            .filter(|&z| z <= 0.0)
            .map(|z| self.eval(x, z))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Discretized `L_{x,ξ}` as `K v = λ W v` with `K` tridiagonal and `W`
/// diagonal, on nodes `Z_i = -i h`, `i < nodes`.
#[derive(Debug, Clone)]
pub struct SturmSystem {
    pub h: f64,
    pub z_bot: f64,
    pub xi: f64,
    pub weights: Vec<f64>,
    /// Dual-cell average of `N` per node.
    pub potential: Vec<f64>,
    pub diag: Vec<f64>,
    /// `K_{i,i+1}` computed from row `i`.
    pub upper: Vec<f64>,
    /// `K_{i+1,i}` computed from row `i+1`.
    pub lower: Vec<f64>,
}

impl SturmSystem {
    pub fn assemble(profile: &VelocityProfile, x: f64, xi: f64, z_bot: f64, nodes: usize) -> Result<Self> {
        if nodes < 200 {
            return Err(Error::InvalidArgument(format!("{nodes} nodes, need at least 200")));
        }
        if !(z_bot < profile.z0) {
            return Err(Error::InvalidArgument("Z_bot must lie below Z0".into()));
        }
        let h = -z_bot / nodes as f64;
        let flux = |i: usize| profile.eval(x, -(i as f64 + 0.5) * h) / h;
        let weights: Vec<f64> = (0..nodes).map(|i| if i == 0 { h / 2.0 } else { h }).collect();
        let potential: Vec<f64> = (0..nodes)
            .map(|i| {
                let z = -(i as f64) * h;
                if i == 0 {
                    profile.eval(x, -h / 4.0)
                } else {
                    0.5 * (profile.eval(x, z + h / 4.0) + profile.eval(x, z - h / 4.0))
                }
            })
            .collect();
        let xi2 = xi * xi;
        let mut diag = Vec::with_capacity(nodes);
        let mut upper = Vec::with_capacity(nodes - 1);
        let mut lower = Vec::with_capacity(nodes - 1);
        for i in 0..nodes {
            let above = if i > 0 { flux(i - 1) } else { 0.0 };
            diag.push(above + flux(i) + xi2 * weights[i] * potential[i]);
            if i + 1 < nodes {
                upper.push(-flux(i));
            }
            if i > 0 {
                lower.push(-above);
            }
        }
        Ok(Self { h, z_bot, xi, weights, potential, diag, upper, lower })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn depth(&self, i: usize) -> f64 {
        -(i as f64) * self.h
    }

    /// `max |K_{i,i+1} - K_{i+1,i}| / max |K_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let norm = self.diag.iter().chain(&self.upper).map(|v| v.abs()).fold(0.0, f64::max);
        let diff = self.upper.iter().zip(&self.lower).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        diff / norm
    }

    fn symmetric(&self) -> (Vec<f64>, Vec<f64>) {
        let a = self.diag.iter().zip(&self.weights).map(|(d, w)| d / w).collect();
        let b = (0..self.len() - 1)
            .map(|i| self.upper[i] / (self.weights[i] * self.weights[i + 1]).sqrt())
            .collect();
        (a, b)
    }

    /// `⟨K v, v⟩ / ⟨W v, v⟩`.
    pub fn rayleigh_quotient(&self, v: &[f64]) -> f64 {
        let n = self.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let mut kv = self.diag[i] * v[i];
            if i > 0 {
                kv += self.lower[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                kv += self.upper[i] * v[i + 1];
            }
            num += kv * v[i];
            den += self.weights[i] * v[i] * v[i];
        }
        num / den
    }

    /// `Σ W_i N̄_i v_i²`, the `ξ²` coefficient of the discrete quadratic form.
    pub fn potential_moment(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.weights).zip(&self.potential).map(|((x, w), p)| w * p * x * x).sum()
    }
}

/// Number of eigenvalues of the symmetric tridiagonal `(a, b)` below `s`.
fn sturm_count(a: &[f64], b: &[f64], s: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..a.len() {
        let off = if i > 0 { b[i - 1] * b[i - 1] / d } else { 0.0 };
        d = a[i] - s - off;
        if d == 0.0 {
            d = -f64::EPSILON * (a[i].abs() + s.abs() + 1.0);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// `j`-th eigenvalue (0-based) by bisection inside `[lo, hi]`.
fn bisect_eigenvalue(a: &[f64], b: &[f64], j: usize, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(lo.abs()) {
            break;
        }
        if sturm_count(a, b, mid) > j {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `(T - s) y = r` for symmetric tridiagonal `T` with partial pivoting.
fn shifted_solve(a: &[f64], b: &[f64], s: f64, r: &[f64]) -> Vec<f64> {
    let n = a.len();
    // Rows of the pivoted upper factor hold three bands.
    let mut u0 = vec![0.0; n];
    let mut u1 = vec![0.0; n];
    let mut u2 = vec![0.0; n];
    let mut rhs = r.to_vec();
    let mut cur = [a[0] - s, if n > 1 { b[0] } else { 0.0 }, 0.0];
    for i in 0..n {
        if i + 1 == n {
            u0[i] = if cur[0] == 0.0 { f64::EPSILON } else { cur[0] };
            break;
        }
        let next = [b[i], a[i + 1] - s, if i + 2 < n { b[i + 1] } else { 0.0 }];
        if cur[0].abs() >= next[0].abs() {
            let p = if cur[0] == 0.0 { f64::EPSILON } else { cur[0] };
            let m = next[0] / p;
            u0[i] = p;
            u1[i] = cur[1];
            u2[i] = cur[2];
            rhs[i + 1] -= m * rhs[i];
            cur = [next[1] - m * cur[1], next[2] - m * cur[2], 0.0];
        } else {
            let m = cur[0] / next[0];
            u0[i] = next[0];
            u1[i] = next[1];
            u2[i] = next[2];
            rhs.swap(i, i + 1);
            rhs[i + 1] -= m * rhs[i];
            cur = [cur[1] - m * next[1], cur[2] - m * next[2], 0.0];
        }
    }
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = rhs[i];
        if i + 1 < n {
            v -= u1[i] * y[i + 1];
        }
        if i + 2 < n {
            v -= u2[i] * y[i + 2];
        }
        y[i] = v / u0[i];
    }
    y
}

fn inverse_iteration(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    let n = a.len();
    let shift = lambda + 1e-13 * lambda.abs().max(1.0);
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (0.7 * i as f64).sin()).collect();
    for _ in 0..4 {
        let y = shifted_solve(a, b, shift, &v);
        let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = y.iter().map(|x| x / norm).collect();
    }
    v
}

/// Trapped eigenpair on the grid of a [`SturmSystem`].
#[derive(Debug, Clone)]
pub struct TrappedMode {
    pub lambda: f64,
    /// Nodal values with `Σ W_i φ_i² = 1` and `φ(0) > 0`.
    pub phi: Vec<f64>,
    /// Mass in the bottom tenth of the deep layer.
    pub bottom_mass: f64,
}

#[derive(Debug, Clone)]
pub struct SturmSolution {
    pub system: SturmSystem,
    pub modes: Vec<TrappedMode>,
}

fn solve_system(profile: &VelocityProfile, system: SturmSystem) -> Result<SturmSolution> {
    let xi2 = system.xi * system.xi;
    let hi = profile.n_inf * xi2 * (1.0 - THRESHOLD_MARGIN);
    let (a, b) = system.symmetric();
    let count = sturm_count(&a, &b, hi);
    if count == 0 {
        return Err(Error::NoTrappedModes);
    }
    let lo = xi2 * system.potential.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12 * hi.abs() - 1e-300;
    let bottom_start = system.z_bot + 0.1 * (profile.z0 - system.z_bot);
    let mut modes = Vec::with_capacity(count);
    for j in 0..count {
        let lambda = bisect_eigenvalue(&a, &b, j, lo, hi);
        let u = inverse_iteration(&a, &b, lambda);
        let mut phi: Vec<f64> = u.iter().zip(&system.weights).map(|(x, w)| x / w.sqrt()).collect();
        let norm = system.weights.iter().zip(&phi).map(|(w, p)| w * p * p).sum::<f64>().sqrt();
        let sign = if phi[0] < 0.0 { -1.0 } else { 1.0 };
        phi.iter_mut().for_each(|p| *p *= sign / norm);
        let bottom_mass = (0..system.len())
            .filter(|&i| system.depth(i) <= bottom_start)
            .map(|i| system.weights[i] * phi[i] * phi[i])
            .sum();
        modes.push(TrappedMode { lambda, phi, bottom_mass });
    }
    Ok(SturmSolution { system, modes })
}

/// Trapped eigenvalues of `L_{x,ξ}` below `N_∞ ξ² (1 - margin)`.
pub fn sturm_liouville_eigs(
    profile: &VelocityProfile,
    x: f64,
    xi: f64,
    z_bot: f64,
    nodes: usize,
) -> Result<SturmSolution> {
    let system = SturmSystem::assemble(profile, x, xi, z_bot, nodes)?;
    let sol = solve_system(profile, system)?;
    for (j, m) in sol.modes.iter().enumerate() {
        if m.bottom_mass > DECAY_TOLERANCE {
            return Err(Error::InsufficientDecay { mode: j, mass: m.bottom_mass });
        }
    }
    Ok(sol)
}

/// Grid policy for [`dispersion_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionOptions {
    /// Grid spacing, held fixed across `ξ` so tracks compare node by node.
    pub h: f64,
    /// Initial depth of the deep layer, in units of `|Z₀|`.
    pub initial_depth: f64,
    /// Largest grid tried before a slowly decaying mode is dropped.
    pub max_nodes: usize,
    /// Overlap needed to continue a track.
    pub overlap: f64,
}

impl Default for DispersionOptions {
    fn default() -> Self {
        Self { h: 2.5e-3, initial_depth: 4.0, max_nodes: 200_000, overlap: 0.8 }
    }
}

/// One `ξ` sample of a dispersion table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionPoint {
    pub xi: f64,
    /// Ascending eigenvalues.
    pub lambda: Vec<f64>,
    /// `dω/dξ` per eigenvalue.
    pub group_velocity: Vec<f64>,
    /// Track id per eigenvalue.
    pub branch: Vec<usize>,
    pub z_bot: f64,
    pub nodes: usize,
    /// Modes too close to the continuum to resolve within `max_nodes`.
    pub dropped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionTable {
    pub x: f64,
    pub n0: f64,
    pub n_inf: f64,
    pub points: Vec<DispersionPoint>,
    /// `(branch, index of first ξ)` for tracks entering after the first sample.
    pub births: Vec<(usize, usize)>,
    pub branch_count: usize,
}

impl DispersionTable {
    pub fn mode_counts(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.lambda.len()).collect()
    }

    /// `λ` of `branch` at each `ξ`, `None` where the track is absent.
    pub fn branch(&self, branch: usize) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|p| p.branch.iter().position(|&b| b == branch).map(|i| p.lambda[i]))
            .collect()
    }

    /// Writes `x,xi,branch,lambda,omega,group_velocity`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,xi,branch,lambda,omega,group_velocity")?;
        for p in &self.points {
            for i in 0..p.lambda.len() {
                writeln!(
                    out,
                    "{},{},{},{:.15e},{:.15e},{:.15e}",
                    self.x,
                    p.xi,
                    p.branch[i],
                    p.lambda[i],
                    p.lambda[i].sqrt(),
                    p.group_velocity[i]
                )?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

struct SolvedPoint {
    point: DispersionPoint,
    shapes: Vec<Vec<f64>>,
}

fn solve_point(profile: &VelocityProfile, x: f64, xi: f64, opts: &DispersionOptions) -> Result<SolvedPoint> {
    let mut depth = opts.initial_depth * profile.z0.abs();
    loop {
        let z_bot = profile.z0 - depth;
        let nodes = ((-z_bot / opts.h).round() as usize).max(200);
        let sol = match solve_system(profile, SturmSystem::assemble(profile, x, xi, z_bot, nodes)?) {
            Ok(s) => s,
            Err(Error::NoTrappedModes) => {
                return Ok(SolvedPoint {
                    point: DispersionPoint {
                        xi,
                        lambda: vec![],
                        group_velocity: vec![],
                        branch: vec![],
                        z_bot,
                        nodes,
                        dropped: 0,
                    },
                    shapes: vec![],
                })
            }
            Err(e) => return Err(e),
        };
        let bad = sol.modes.iter().filter(|m| m.bottom_mass > DECAY_TOLERANCE).count();
        let can_grow = 2 * nodes <= opts.max_nodes;
        if bad > 0 && can_grow {
            depth *= 2.0;
            continue;
        }
        let keep: Vec<&TrappedMode> = sol.modes.iter().filter(|m| m.bottom_mass <= DECAY_TOLERANCE).collect();
        let group_velocity = keep
            .iter()
            .map(|m| {
                let dl = 2.0 * xi * sol.system.potential_moment(&m.phi);
                dl / (2.0 * m.lambda.sqrt())
            })
            .collect();
        return Ok(SolvedPoint {
            point: DispersionPoint {
                xi,
                lambda: keep.iter().map(|m| m.lambda).collect(),
                group_velocity,
                branch: vec![],
                z_bot,
                nodes,
                dropped: bad,
            },
            shapes: keep.iter().map(|m| m.phi.clone()).collect(),
        });
    }
}

fn overlap(a: &[f64], b: &[f64], h: f64) -> f64 {
    let n = a.len().min(b.len());
    let dot: f64 = (0..n).map(|i| if i == 0 { h / 2.0 } else { h } * a[i] * b[i]).sum();
    dot.abs()
}

/// Eigenvalues over an ascending `ξ` grid at fixed `x`, with tracks
/// continued by eigenvector overlap and Hellmann–Feynman group velocities
/// `dω/dξ = ξ ⟨N φ, φ⟩ / √λ`.
pub fn dispersion_table(
    profile: &VelocityProfile,
    x: f64,
    xis: &[f64],
    opts: &DispersionOptions,
) -> Result<DispersionTable> {
    profile.validate()?;
    if xis.is_empty() || xis.iter().any(|&v| !(v > 0.0)) || xis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("ξ grid must be positive and ascending".into()));
    }
    let solved: Vec<Result<SolvedPoint>> = xis.par_iter().map(|&xi| solve_point(profile, x, xi, opts)).collect();
    let mut solved = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let mut next_id = 0usize;
    let mut births = Vec::new();
    let mut prev: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, s) in solved.iter_mut().enumerate() {
        let mut used = vec![false; prev.len()];
        let mut ids = Vec::with_capacity(s.shapes.len());
        for shape in &s.shapes {
            let best = prev
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .map(|(k, (_, p))| (k, overlap(p, shape, opts.h)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((k, o)) if o > opts.overlap => {
                    used[k] = true;
                    ids.push(prev[k].0);
                }
                _ => {
                    if idx > 0 {
                        births.push((next_id, idx));
                    }
                    ids.push(next_id);
                    next_id += 1;
                }
            }
        }
        prev = ids.iter().copied().zip(s.shapes.iter().cloned()).collect();
        s.point.branch = ids;
    }
    Ok(DispersionTable {
        x,
        n0: profile.n0(x),
        n_inf: profile.n_inf,
        points: solved.into_iter().map(|s| s.point).collect(),
        births,
        branch_count: next_id,
    })
}

/// `H₀(x, ξ) = √λ_j(x, ξ)` sampled on an `(x, ξ)` grid, evaluated with a
/// natural cubic spline in `|ξ|` and linear interpolation in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedHamiltonian {
    pub branch: usize,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    /// `values[ix][iξ]`.
    pub values: Vec<Vec<f64>>,
    /// Spline second derivatives in `ξ`, per row.
    pub second: Vec<Vec<f64>>,
}

fn spline_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        let r = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
        c[i] = h1 / diag;
        d[i] = (r - h0 * d[i - 1]) / diag;
    }
    for i in (1..n - 1).rev() {
        m[i] = d[i] - c[i] * m[i + 1];
    }
    m
}

impl TabulatedHamiltonian {
    /// Value and `∂/∂ξ` of row `r` at `ξ ≥ 0`.
    fn row(&self, r: usize, xi: f64) -> (f64, f64) {
        let (xs, y, m) = (&self.xi, &self.values[r], &self.second[r]);
        let n = xs.len();
        let i = xs.partition_point(|&v| v <= xi).clamp(1, n - 1);
        let (x0, x1) = (xs[i - 1], xs[i]);
        let h = x1 - x0;
        let a = (x1 - xi) / h;
        let b = (xi - x0) / h;
        let v = a * y[i - 1] + b * y[i] + ((a * a * a - a) * m[i - 1] + (b * b * b - b) * m[i]) * h * h / 6.0;
        let dv = (y[i] - y[i - 1]) / h - (3.0 * a * a - 1.0) * h * m[i - 1] / 6.0
            + (3.0 * b * b - 1.0) * h * m[i] / 6.0;
        (v, dv)
    }

    /// `(H₀, ∂H₀/∂x, ∂H₀/∂ξ)`; even in `ξ`.
    pub fn eval(&self, x: f64, xi: f64) -> (f64, f64, f64) {
        let s = if xi < 0.0 { -1.0 } else { 1.0 };
        let q = xi.abs();
        let nx = self.x.len();
        if nx == 1 {
            let (v, dv) = self.row(0, q);
            return (v, 0.0, s * dv);
        }
        let i = self.x.partition_point(|&v| v <= x).clamp(1, nx - 1);
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        let w = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        let (v0, d0) = self.row(i - 1, q);
        let (v1, d1) = self.row(i, q);
        let dx = if x < x0 || x > x1 { 0.0 } else { (v1 - v0) / (x1 - x0) };
        (v0 * (1.0 - w) + v1 * w, dx, s * (d0 * (1.0 - w) + d1 * w))
    }

    /// Second derivatives `(H_xx, H_xξ, H_ξξ)` of the interpolant. `H_xx`
    /// vanishes inside each linear cell in `x`.
    pub fn hessian(&self, x: f64, xi: f64) -> (f64, f64, f64) {
        let s = if xi < 0.0 { -1.0 } else { 1.0 };
        let q = xi.abs();
        let nx = self.x.len();
        if nx == 1 {
            return (0.0, 0.0, self.row_second(0, q));
        }
        let i = self.x.partition_point(|&v| v <= x).clamp(1, nx - 1);
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        let w = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        let (_, d0) = self.row(i - 1, q);
        let (_, d1) = self.row(i, q);
        let dxi = if x < x0 || x > x1 { 0.0 } else { s * (d1 - d0) / (x1 - x0) };
        let m = self.row_second(i - 1, q) * (1.0 - w) + self.row_second(i, q) * w;
        (0.0, dxi, m)
    }

    fn row_second(&self, r: usize, xi: f64) -> f64 {
        let (xs, m) = (&self.xi, &self.second[r]);
        let n = xs.len();
        let i = xs.partition_point(|&v| v <= xi).clamp(1, n - 1);
        let b = (xi - xs[i - 1]) / (xs[i] - xs[i - 1]);
        m[i - 1] * (1.0 - b) + m[i] * b
    }

    pub fn xi_range(&self) -> (f64, f64) {
        (self.xi[0], self.xi[self.xi.len() - 1])
    }
}

/// Samples `√λ_j` from one table per `x` station (sorted by `x`, common
/// `ξ` grid).
pub fn effective_hamiltonian_export(tables: &[DispersionTable], branch: usize) -> Result<TabulatedHamiltonian> {
    let first = tables.first().ok_or_else(|| Error::InvalidArgument("no tables".into()))?;
    let xi: Vec<f64> = first.points.iter().map(|p| p.xi).collect();
    if xi.len() < 2 {
        return Err(Error::InvalidArgument("need at least two ξ samples".into()));
    }
    let mut x = Vec::with_capacity(tables.len());
    let mut values = Vec::with_capacity(tables.len());
    for t in tables {
        if t.points.len() != xi.len() || t.points.iter().zip(&xi).any(|(p, &v)| p.xi != v) {
            return Err(Error::InvalidArgument("tables use different ξ grids".into()));
        }
        if x.last().is_some_and(|&v| t.x <= v) {
            return Err(Error::InvalidArgument("tables must be sorted by x".into()));
        }
        let row = t
            .branch(branch)
            .iter()
            .zip(&xi)
            .map(|(l, &v)| l.map(f64::sqrt).ok_or(Error::BranchHole { branch, xi: v }))
            .collect::<Result<Vec<f64>>>()?;
        x.push(t.x);
        values.push(row);
    }
    let second = values.iter().map(|row| spline_second_derivatives(&xi, row)).collect();
    Ok(TabulatedHamiltonian { branch, x, xi, values, second })
}
