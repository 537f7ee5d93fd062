//! Discrete domains and exact spectral representations of `-Δ`.
//!
//! Fourier domains (circle, torus) carry the continuum symbol `|k|²` for each
//! retained wave vector, so operator identities hold to rounding error. The
//! Neumann interval uses cosine modes on a cell-centred grid. A dense path
//! handles arbitrary operators that are self-adjoint for a weighted inner
//! product.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest operator handled by the dense eigensolver path.
pub const DENSE_MODE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Circle1d,
    Torus2d,
    IntervalNeumann1d,
}

/// A uniform grid on a periodic or Neumann domain.
///
/// For Fourier domains the number of grid points equals the number of
/// retained modes per axis and must be odd, so that the wave numbers
/// `-(n-1)/2 ..= (n-1)/2` are symmetric about zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDomain {
    pub kind: DomainKind,
    pub extent: Vec<f64>,
    pub counts: Vec<usize>,
}

impl DiscreteDomain {
    pub fn new(kind: DomainKind, extent: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let dim = match kind {
            DomainKind::Circle1d | DomainKind::IntervalNeumann1d => 1,
            DomainKind::Torus2d => 2,
        };
        if extent.len() != dim || counts.len() != dim {
            return Err(Error::InvalidDomain(format!(
                "{kind:?} needs {dim} extent and count entries"
            )));
        }
        for (&l, &n) in extent.iter().zip(&counts) {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidDomain(format!("extent {l} must be positive")));
            }
            if n < 2 {
                return Err(Error::InvalidDomain(format!(
                    "mode count {n} must be at least 2"
                )));
            }
            if kind != DomainKind::IntervalNeumann1d && n % 2 == 0 {
                return Err(Error::InvalidDomain(format!(
                    "Fourier mode count {n} must be odd for a symmetric truncation"
                )));
            }
        }
        Ok(Self { kind, extent, counts })
    }

    pub fn circle(modes: usize) -> Result<Self> {
        Self::new(DomainKind::Circle1d, vec![2.0 * PI], vec![modes])
    }

    pub fn circle_with_extent(modes: usize, circumference: f64) -> Result<Self> {
        Self::new(DomainKind::Circle1d, vec![circumference], vec![modes])
    }

    pub fn torus(n0: usize, n1: usize) -> Result<Self> {
        Self::new(DomainKind::Torus2d, vec![2.0 * PI, 2.0 * PI], vec![n0, n1])
    }

    pub fn interval_neumann(modes: usize, length: f64) -> Result<Self> {
        Self::new(DomainKind::IntervalNeumann1d, vec![length], vec![modes])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_periodic(&self) -> bool {
        self.kind != DomainKind::IntervalNeumann1d
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.counts[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Physical coordinates of the flat grid index (row-major, axis 0 outer).
    pub fn grid_point(&self, index: usize) -> Vec<f64> {
        let mut coords = vec![0.0; self.dim()];
        let mut rest = index;
        for axis in (0..self.dim()).rev() {
            let n = self.counts[axis];
            let i = rest % n;
            rest /= n;
            let offset = if self.kind == DomainKind::IntervalNeumann1d { 0.5 } else { 0.0 };
            coords[axis] = (i as f64 + offset) * self.spacing(axis);
        }
        coords
    }

    /// Flat index of the grid node at `point`, if it lies on one.
    pub fn node_index(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim() {
            return None;
        }
        let mut flat = 0;
        for axis in 0..self.dim() {
            let offset = if self.kind == DomainKind::IntervalNeumann1d { 0.5 } else { 0.0 };
            let mut r = point[axis] / self.spacing(axis) - offset;
            if self.is_periodic() {
                r = r.rem_euclid(self.counts[axis] as f64);
            }
            let i = r.round();
            if (r - i).abs() > 1e-9 {
                return None;
            }
            let mut i = i as i64;
            if self.is_periodic() {
                i = i.rem_euclid(self.counts[axis] as i64);
            }
            if i < 0 || i as usize >= self.counts[axis] {
                return None;
            }
            flat = flat * self.counts[axis] + i as usize;
        }
        Some(flat)
    }

    /// Distance between two points, using the minimum image on periodic axes.
    pub fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        let mut s = 0.0;
        for axis in 0..self.dim() {
            let mut d = p[axis] - q[axis];
            if self.is_periodic() {
                let l = self.extent[axis];
                d = (d + 0.5 * l).rem_euclid(l) - 0.5 * l;
            }
            s += d * d;
        }
        s.sqrt()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().all(|v| v.is_finite())
            && (self.is_periodic()
                || p.iter().zip(&self.extent).all(|(&v, &l)| (0.0..=l).contains(&v)))
    }
}

/// Exact cos and sinc kernels of `q² = Q²`, entire in `q²`.
///
/// True values are `cos_part · e^{log_scale}` and `sinc_part · e^{log_scale}`;
/// `log_scale` is non-zero only in the strongly overdamped regime where
/// `cosh` would overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveKernelValue {
    pub cos_part: f64,
    pub sinc_part: f64,
    pub log_scale: f64,
}

impl WaveKernelValue {
    pub fn cos(&self) -> f64 {
        self.cos_part * self.log_scale.exp()
    }

    pub fn sinc(&self) -> f64 {
        self.sinc_part * self.log_scale.exp()
    }

    /// Both kernels multiplied by `e^{-rate·t}` without intermediate overflow.
    pub fn damped(&self, rate: f64, t: f64) -> (f64, f64) {
        let f = (self.log_scale - rate * t).exp();
        (self.cos_part * f, self.sinc_part * f)
    }
}

/// `cos(t√q²)` and `sin(t√q²)/√q²`, continued to `q² ≤ 0`.
pub fn wave_kernels(q2: f64, t: f64) -> WaveKernelValue {
    let x = q2 * t * t;
    if x.abs() < 1e-3 {
        // Taylor series in -x; eight terms reach machine precision here.
        let mut c = 0.0;
        let mut s = 0.0;
        let mut term_c = 1.0;
        let mut term_s = 1.0;
        for n in 0..9 {
            c += term_c;
            s += term_s;
            let n = n as f64;
            term_c *= -x / ((2.0 * n + 1.0) * (2.0 * n + 2.0));
            term_s *= -x / ((2.0 * n + 2.0) * (2.0 * n + 3.0));
        }
        return WaveKernelValue { cos_part: c, sinc_part: s * t, log_scale: 0.0 };
    }
    if q2 > 0.0 {
        let w = q2.sqrt();
        let (s, c) = (w * t).sin_cos();
        WaveKernelValue { cos_part: c, sinc_part: s / w, log_scale: 0.0 }
    } else {
        let w = (-q2).sqrt();
        let arg = w * t;
        if x < -700.0 {
            let e = (-2.0 * arg).exp();
            WaveKernelValue {
                cos_part: 0.5 * (1.0 + e),
                sinc_part: 0.5 * (1.0 - e) / w,
                log_scale: arg,
            }
        } else {
            WaveKernelValue { cos_part: arg.cosh(), sinc_part: arg.sinh() / w, log_scale: 0.0 }
        }
    }
}

#[derive(Clone)]
struct FftPlans {
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for FftPlans {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FftPlans").field("axes", &self.forward.len()).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Basis {
    /// Plane waves `e^{ik·x}/√vol`; `waves[m]` is the integer wave vector of
    /// sorted mode `m` and `bins[m]` its flat FFT bin.
    Fourier { waves: Vec<[i64; 2]>, bins: Vec<usize> },
    /// `cos(πk x/L)` modes normalised on the cell-centred grid.
    Cosine { orders: Vec<usize>, table: Vec<f64> },
    /// Columns of `vectors` are orthonormal for `Σ w_j u_j conj(v_j)`.
    Dense { vectors: DMatrix<f64>, weights: Vec<f64> },
}

/// Eigenvalues and eigenmodes of a self-adjoint operator on a discrete domain.
/// Immutable once built; cheap to share between threads.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    domain: DiscreteDomain,
    eigenvalues: Vec<f64>,
    basis: Basis,
    plans: Option<FftPlans>,
}

/// Exact spectral `-Δ` on `domain`.
pub fn build_laplacian(domain: &DiscreteDomain) -> Result<SpectralDecomposition> {
    SpectralDecomposition::laplacian(domain)
}

impl SpectralDecomposition {
    pub fn laplacian(domain: &DiscreteDomain) -> Result<Self> {
        let domain = DiscreteDomain::new(domain.kind, domain.extent.clone(), domain.counts.clone())?;
        match domain.kind {
            DomainKind::Circle1d | DomainKind::Torus2d => Ok(Self::fourier(domain)),
            DomainKind::IntervalNeumann1d => Ok(Self::cosine(domain)),
        }
    }

    fn fourier(domain: DiscreteDomain) -> Self {
        let dim = domain.dim();
        let half: Vec<i64> = domain.counts.iter().map(|&n| (n as i64 - 1) / 2).collect();
        let mut modes: Vec<(f64, [i64; 2], usize)> = Vec::with_capacity(domain.len());
        let k0 = -half[0]..=half[0];
        let k1 = if dim == 2 { -half[1]..=half[1] } else { 0..=0 };
        for a in k0 {
            for b in k1.clone() {
                let wave = [a, b];
                let mut mu = 0.0;
                let mut bin = 0usize;
                for axis in 0..dim {
                    let g = 2.0 * PI * wave[axis] as f64 / domain.extent[axis];
                    mu += g * g;
                    let n = domain.counts[axis] as i64;
                    bin = bin * domain.counts[axis] + wave[axis].rem_euclid(n) as usize;
                }
                modes.push((mu, wave, bin));
            }
        }
        modes.sort_by(|x, y| {
            x.0.total_cmp(&y.0)
                .then_with(|| x.1[0].abs().cmp(&y.1[0].abs()))
                .then_with(|| x.1.cmp(&y.1))
        });
        let mut planner = FftPlanner::new();
        let forward = domain.counts.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = domain.counts.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            eigenvalues: modes.iter().map(|m| m.0).collect(),
            basis: Basis::Fourier {
                waves: modes.iter().map(|m| m.1).collect(),
                bins: modes.iter().map(|m| m.2).collect(),
            },
            plans: Some(FftPlans { forward, inverse }),
            domain,
        }
    }

    fn cosine(domain: DiscreteDomain) -> Self {
        let n = domain.counts[0];
        let l = domain.extent[0];
        let mut table = vec![0.0; n * n];
        for k in 0..n {
            let norm = if k == 0 { (1.0 / l).sqrt() } else { (2.0 / l).sqrt() };
            for j in 0..n {
                let x = (j as f64 + 0.5) * l / n as f64;
                table[k * n + j] = norm * (PI * k as f64 * x / l).cos();
            }
        }
        Self {
            eigenvalues: (0..n).map(|k| (PI * k as f64 / l).powi(2)).collect(),
            basis: Basis::Cosine { orders: (0..n).collect(), table },
            plans: None,
            domain,
        }
    }

    /// Dense decomposition of a grid operator `matrix` that is self-adjoint
    /// for the inner product `Σ w_j u_j conj(v_j)`.
    pub fn from_weighted_symmetric(
        domain: &DiscreteDomain,
        matrix: &DMatrix<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = domain.len();
        if n > DENSE_MODE_CAP {
            return Err(Error::InvalidArgument(format!(
                "dense path capped at {DENSE_MODE_CAP} modes, got {n}"
            )));
        }
        if matrix.nrows() != n || matrix.ncols() != n || weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows() });
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let sym = DMatrix::from_fn(n, n, |i, j| {
            let a = sq[i] * matrix[(i, j)] / sq[j];
            let b = sq[j] * matrix[(j, i)] / sq[i];
            0.5 * (a + b)
        });
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vectors = DMatrix::from_fn(n, n, |j, m| eig.eigenvectors[(j, order[m])] / sq[j]);
        Ok(Self {
            domain: domain.clone(),
            eigenvalues: order.iter().map(|&m| eig.eigenvalues[m]).collect(),
            basis: Basis::Dense { vectors, weights },
            plans: None,
        })
    }

    pub fn domain(&self) -> &DiscreteDomain {
        &self.domain
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn is_multiplier(&self) -> bool {
        matches!(self.basis, Basis::Fourier { .. })
    }

    /// Integer wave vector of a Fourier mode.
    pub fn wave_vector(&self, mode: usize) -> Option<[i64; 2]> {
        match &self.basis {
            Basis::Fourier { waves, .. } => Some(waves[mode]),
            _ => None,
        }
    }

    /// Physical wave vector `2πk/L` of a Fourier mode.
    pub fn wave_number(&self, mode: usize) -> Option<Vec<f64>> {
        self.wave_vector(mode).map(|w| {
            (0..self.domain.dim())
                .map(|a| 2.0 * PI * w[a] as f64 / self.domain.extent[a])
                .collect()
        })
    }

    pub fn weight(&self, index: usize) -> f64 {
        match &self.basis {
            Basis::Dense { weights, .. } => weights[index],
            _ => self.domain.cell_volume(),
        }
    }

    /// Values `e_k(point)` of every mode. Dense bases only know grid nodes.
    pub fn evaluate_modes(&self, point: &[f64]) -> Result<Vec<Complex64>> {
        if !self.domain.contains(point) {
            return Err(Error::InvalidArgument(format!("point {point:?} outside domain")));
        }
        match &self.basis {
            Basis::Fourier { waves, .. } => {
                let vol: f64 = self.domain.extent.iter().product();
                let norm = 1.0 / vol.sqrt();
                Ok(waves
                    .iter()
                    .map(|w| {
                        let phase: f64 = (0..self.domain.dim())
                            .map(|a| 2.0 * PI * w[a] as f64 * point[a] / self.domain.extent[a])
                            .sum();
                        Complex64::from_polar(norm, phase)
                    })
                    .collect())
            }
            Basis::Cosine { orders, .. } => {
                let l = self.domain.extent[0];
                Ok(orders
                    .iter()
                    .map(|&k| {
                        let norm = if k == 0 { (1.0 / l).sqrt() } else { (2.0 / l).sqrt() };
                        Complex64::new(norm * (PI * k as f64 * point[0] / l).cos(), 0.0)
                    })
                    .collect())
            }
            Basis::Dense { vectors, .. } => {
                let j = self.domain.node_index(point).ok_or_else(|| {
                    Error::InvalidArgument(format!("dense basis needs a grid node, got {point:?}"))
                })?;
                Ok((0..self.len()).map(|m| Complex64::new(vectors[(j, m)], 0.0)).collect())
            }
        }
    }

    /// Coefficients `⟨e_k, u⟩` in sorted mode order.
    pub fn forward(&self, field: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.domain.len();
        if field.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: field.len() });
        }
        match &self.basis {
            Basis::Fourier { bins, .. } => {
                let mut buf = field.to_vec();
                self.fft_nd(&mut buf, true);
                let vol: f64 = self.domain.extent.iter().product();
                let scale = self.domain.cell_volume() / vol.sqrt();
                Ok(bins.iter().map(|&b| buf[b] * scale).collect())
            }
            Basis::Cosine { table, .. } => {
                let h = self.domain.cell_volume();
                Ok((0..n)
                    .map(|k| {
                        let row = &table[k * n..(k + 1) * n];
                        row.iter().zip(field).map(|(&c, &u)| u * c).sum::<Complex64>() * h
                    })
                    .collect())
            }
            Basis::Dense { vectors, weights } => Ok((0..self.len())
                .map(|m| {
                    (0..n).map(|j| field[j] * (weights[j] * vectors[(j, m)])).sum()
                })
                .collect()),
        }
    }

    /// Grid values `Σ c_k e_k(x_j)`.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.domain.len();
        if coeffs.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: coeffs.len() });
        }
        match &self.basis {
            Basis::Fourier { bins, .. } => {
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for (&b, &c) in bins.iter().zip(coeffs) {
                    buf[b] = c;
                }
                self.fft_nd(&mut buf, false);
                let vol: f64 = self.domain.extent.iter().product();
                let scale = 1.0 / vol.sqrt();
                buf.iter_mut().for_each(|v| *v *= scale);
                Ok(buf)
            }
            Basis::Cosine { table, .. } => {
                let mut out = vec![Complex64::new(0.0, 0.0); n];
                for (k, &c) in coeffs.iter().enumerate() {
                    let row = &table[k * n..(k + 1) * n];
                    out.iter_mut().zip(row).for_each(|(o, &t)| *o += c * t);
                }
                Ok(out)
            }
            Basis::Dense { vectors, .. } => Ok((0..n)
                .map(|j| (0..self.len()).map(|m| coeffs[m] * vectors[(j, m)]).sum())
                .collect()),
        }
    }

    fn fft_nd(&self, buf: &mut [Complex64], forward: bool) {
        let plans = self.plans.as_ref().expect("Fourier basis carries FFT plans");
        let p = if forward { &plans.forward } else { &plans.inverse };
        match self.domain.dim() {
            1 => p[0].process(buf),
            _ => {
                let (n0, n1) = (self.domain.counts[0], self.domain.counts[1]);
                p[1].process(buf);
                let mut col = vec![Complex64::new(0.0, 0.0); n0];
                for j in 0..n1 {
                    for i in 0..n0 {
                        col[i] = buf[i * n1 + j];
                    }
                    p[0].process(&mut col);
                    for i in 0..n0 {
                        buf[i * n1 + j] = col[i];
                    }
                }
            }
        }
    }

    /// Weighted squared norm `Σ w_j |u_j|²`.
    pub fn norm_sqr(&self, field: &[Complex64]) -> f64 {
        field.iter().enumerate().map(|(j, u)| self.weight(j) * u.norm_sqr()).sum()
    }
}

/// `f(-Δ) u` computed mode by mode.
pub fn apply_operator_function<F, T>(
    dec: &SpectralDecomposition,
    f: F,
    field: &[Complex64],
) -> Result<Vec<Complex64>>
where
    F: Fn(f64) -> T,
    T: Into<Complex64>,
{
    let mut coeffs = dec.forward(field)?;
    for (c, &mu) in coeffs.iter_mut().zip(dec.eigenvalues()) {
        let v: Complex64 = f(mu).into();
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite(format!("operator function at eigenvalue {mu}")));
        }
        *c *= v;
    }
    dec.inverse(&coeffs)
}
