//! Stationary random sources: discrete white noise, the filter pipeline
//! `f = W · l(εD) · χ_I · (Φ ⋆ w)`, its covariance kernel and the averaged
//! Wigner power spectrum.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{DiscreteDomain, DomainKind, SpectralDecomposition};
use crate::util::fft_nd;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Spectral band on the mode frequency `√μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Band {
    #[default]
    All,
    Interval { lo: f64, hi: f64 },
    /// `√μ ≥ lo`.
    Above { lo: f64 },
}

impl Band {
    pub fn contains_eigenvalue(&self, mu: f64) -> bool {
        match *self {
            Band::All => true,
            Band::Interval { lo, hi } => {
                let w = mu.max(0.0).sqrt();
                w >= lo && w <= hi
            }
            Band::Above { lo } => mu.max(0.0).sqrt() >= lo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Band::All => Ok(()),
            Band::Interval { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            Band::Above { lo } if lo.is_finite() => Ok(()),
            _ => Err(Error::InvalidArgument("band must be a finite closed interval".into())),
        }
    }
}

/// C^∞ step going from 1 at `s ≤ 0` to 0 at `s ≥ 1`.
pub fn smooth_cutoff(s: f64) -> f64 {
    fn g(s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (-1.0 / s).exp()
        }
    }
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let a = g(1.0 - s);
        a / (a + g(s))
    }
}

/// Frequency multiplier `l(ξ)` evaluated at `ξ = ε|k|` (physical wave number).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Multiplier {
    #[default]
    One,
    /// Indicator of `lo ≤ |ξ| ≤ hi`.
    Indicator { lo: f64, hi: f64 },
    /// Smooth bump equal to 1 at `|ξ| = center`, vanishing for
    /// `||ξ| - center| ≥ half_width`.
    Bump { center: f64, half_width: f64 },
    /// Piecewise-linear table in `|ξ|`, zero outside.
    Table { xi: Vec<f64>, values: Vec<f64> },
}

impl Multiplier {
    pub fn eval(&self, xi: f64) -> f64 {
        let a = xi.abs();
        match self {
            Multiplier::One => 1.0,
            Multiplier::Indicator { lo, hi } => {
                if a >= *lo && a <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
            Multiplier::Bump { center, half_width } => smooth_cutoff((a - center).abs() / half_width),
            Multiplier::Table { xi, values } => {
                if xi.is_empty() || a < xi[0] || a > xi[xi.len() - 1] {
                    return 0.0;
                }
                let i = xi.partition_point(|&v| v <= a).min(xi.len() - 1).max(1);
                let (x0, x1) = (xi[i - 1], xi[i]);
                if x1 == x0 {
                    return values[i];
                }
                let w = (a - x0) / (x1 - x0);
                values[i - 1] * (1.0 - w) + values[i] * w
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Multiplier::Table { xi, values } => {
                if xi.len() != values.len() || xi.len() < 2 {
                    return Err(Error::InvalidArgument("multiplier table needs ≥ 2 matching rows".into()));
                }
                if xi.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidArgument("multiplier table must be sorted".into()));
                }
                Ok(())
            }
            Multiplier::Bump { half_width, .. } if !(*half_width > 0.0) => {
                Err(Error::InvalidArgument("bump half width must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Spatial window applied after the frequency filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Window {
    #[default]
    None,
    Indicator { center: Vec<f64>, half_width: f64 },
    /// 1 within `half_width` of `center`, tapering smoothly to 0 over `taper`.
    Smooth { center: Vec<f64>, half_width: f64, taper: f64 },
}

impl Window {
    pub fn eval(&self, domain: &DiscreteDomain, x: &[f64]) -> f64 {
        match self {
            Window::None => 1.0,
            Window::Indicator { center, half_width } => {
                if domain.distance(x, center) <= *half_width {
                    1.0
                } else {
                    0.0
                }
            }
            Window::Smooth { center, half_width, taper } => {
                smooth_cutoff((domain.distance(x, center) - half_width) / taper)
            }
        }
    }

    /// Distance from `point` to the support of the window.
    pub fn clearance(&self, domain: &DiscreteDomain, point: &[f64]) -> f64 {
        match self {
            Window::None => 0.0,
            Window::Indicator { center, half_width } => {
                (domain.distance(point, center) - half_width).max(0.0)
            }
            Window::Smooth { center, half_width, taper } => {
                (domain.distance(point, center) - half_width - taper).max(0.0)
            }
        }
    }
}

/// Recipe for a filtered stationary source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub domain: DiscreteDomain,
    pub dt: f64,
    #[serde(default)]
    pub band: Band,
    /// Samples `Φ(j·dt)`, `j = 0..taps.len()`. A single tap `1/dt` is the identity.
    pub taps: Vec<f64>,
    #[serde(default)]
    pub multiplier: Multiplier,
    #[serde(default)]
    pub window: Window,
    pub epsilon: f64,
    pub seed: u64,
    /// Real Gaussian samples instead of circular complex ones.
    #[serde(default)]
    pub real: bool,
}

impl NoiseSpec {
    pub fn white(domain: DiscreteDomain, dt: f64, seed: u64) -> Self {
        Self {
            domain,
            dt,
            band: Band::All,
            taps: vec![1.0 / dt],
            multiplier: Multiplier::One,
            window: Window::None,
            epsilon: 1.0,
            seed,
            real: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if self.taps.is_empty() || self.taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("temporal filter needs finite taps".into()));
        }
        self.band.validate()?;
        self.multiplier.validate()?;
        if let Window::Indicator { center, .. } | Window::Smooth { center, .. } = &self.window {
            if center.len() != self.domain.dim() {
                return Err(Error::DimensionMismatch { expected: self.domain.dim(), found: center.len() });
            }
        }
        Ok(())
    }

    /// Support width `t₀` of the temporal filter.
    pub fn support(&self) -> f64 {
        self.taps.len() as f64 * self.dt
    }

    /// Discrete autocorrelation `Ψ_m = dt Σ_j Φ_j Φ_{j+m}` for `m ≥ 0`.
    pub fn autocorrelation(&self) -> Vec<f64> {
        let n = self.taps.len();
        (0..n)
            .map(|m| self.dt * (0..n - m).map(|j| self.taps[j] * self.taps[j + m]).sum::<f64>())
            .collect()
    }
}

/// Mode-space part of the source filter.
#[derive(Debug, Clone)]
pub struct SpatialFilter {
    /// `χ_I(√μ_k) · l(ε k)` per sorted mode.
    pub gain: Vec<f64>,
    /// Window samples on the grid, if any.
    pub window: Option<Vec<f64>>,
}

impl SpatialFilter {
    pub fn new(dec: &SpectralDecomposition, spec: &NoiseSpec) -> Result<Self> {
        spec.validate()?;
        if dec.domain() != &spec.domain {
            return Err(Error::InvalidArgument("noise domain differs from decomposition".into()));
        }
        let gain = (0..dec.len())
            .map(|k| {
                let mu = dec.eigenvalues()[k];
                let band = if spec.band.contains_eigenvalue(mu) { 1.0 } else { 0.0 };
                let xi = dec
                    .wave_number(k)
                    .map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .unwrap_or_else(|| mu.sqrt());
                band * spec.multiplier.eval(spec.epsilon * xi)
            })
            .collect();
        let window = match spec.window {
            Window::None => None,
            _ => Some(
                (0..spec.domain.len())
                    .map(|j| spec.window.eval(&spec.domain, &spec.domain.grid_point(j)))
                    .collect(),
            ),
        };
        Ok(Self { gain, window })
    }

    /// Applies the filter to mode coefficients in place.
    pub fn apply_modes(&self, dec: &SpectralDecomposition, coeffs: &mut [Complex64]) -> Result<()> {
        coeffs.iter_mut().zip(&self.gain).for_each(|(c, g)| *c *= g);
        if let Some(w) = &self.window {
            let mut grid = dec.inverse(coeffs)?;
            grid.iter_mut().zip(w).for_each(|(u, &v)| *u *= v);
            coeffs.copy_from_slice(&dec.forward(&grid)?);
        }
        Ok(())
    }

    /// Matrix `G` with `(G c)` equal to `apply_modes(c)`.
    pub fn matrix(&self, dec: &SpectralDecomposition) -> Result<DMatrix<Complex64>> {
        let n = dec.len();
        let mut g = DMatrix::from_element(n, n, ZERO);
        let mut unit = vec![ZERO; n];
        for col in 0..n {
            unit.iter_mut().for_each(|v| *v = ZERO);
            unit[col] = Complex64::new(1.0, 0.0);
            self.apply_modes(dec, &mut unit)?;
            for row in 0..n {
                g[(row, col)] = unit[row];
            }
        }
        Ok(g)
    }
}

/// Spatial factor of the covariance in the mode basis.
#[derive(Debug, Clone)]
pub enum SpatialCovariance {
    Diagonal(Vec<f64>),
    Dense(DMatrix<Complex64>),
}

impl SpatialCovariance {
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        match self {
            SpatialCovariance::Diagonal(d) => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    d.len(),
                    d.iter().map(|&v| Complex64::new(v, 0.0)),
                ))
            }
            SpatialCovariance::Dense(m) => m.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpatialCovariance::Diagonal(d) => d.len(),
            SpatialCovariance::Dense(m) => m.nrows(),
        }
    }
}

/// `K(t) = Σ_m dt·Ψ_m δ(t - m·dt) · F` with `F` the spatial covariance.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    pub dt: f64,
    /// `Ψ_m` for `m ≥ 0`; `Ψ_{-m} = Ψ_m`.
    pub psi: Vec<f64>,
    pub spatial: SpatialCovariance,
    pub support: f64,
}

impl CovarianceKernel {
    pub fn psi_at(&self, m: i64) -> f64 {
        self.psi.get(m.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    pub fn lag_time(&self, m: i64) -> f64 {
        m as f64 * self.dt
    }

    /// Operator `K` at lag `m` in the mode basis (density per unit time).
    pub fn operator_at(&self, m: i64) -> DMatrix<Complex64> {
        self.spatial.to_dense() * Complex64::new(self.psi_at(m), 0.0)
    }
}

pub fn covariance_kernel(dec: &SpectralDecomposition, spec: &NoiseSpec) -> Result<CovarianceKernel> {
    let filter = SpatialFilter::new(dec, spec)?;
    let spatial = match filter.window {
        None => SpatialCovariance::Diagonal(filter.gain.iter().map(|g| g * g).collect()),
        Some(_) => {
            let g = filter.matrix(dec)?;
            SpatialCovariance::Dense(&g * g.adjoint())
        }
    };
    Ok(CovarianceKernel { dt: spec.dt, psi: spec.autocorrelation(), spatial, support: spec.support() })
}

/// Realized forcing, stored as grid values per step.
#[derive(Debug, Clone)]
pub struct SourceTrajectory {
    pub dt: f64,
    pub steps: usize,
    pub values: Vec<Vec<Complex64>>,
    pub spec: NoiseSpec,
    pub realization_index: u64,
}

/// Counter-based Gaussian generator for one realization.
#[derive(Debug, Clone)]
pub struct WhiteNoise {
    rng: ChaCha8Rng,
    sigma: f64,
    real: bool,
}

impl WhiteNoise {
    pub fn new(domain: &DiscreteDomain, dt: f64, seed: u64, realization: u64, real: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(realization);
        Self { rng, sigma: (1.0 / (dt * domain.cell_volume())).sqrt(), real }
    }

    pub fn fill(&mut self, out: &mut [Complex64]) {
        if self.real {
            for v in out.iter_mut() {
                let x: f64 = StandardNormal.sample(&mut self.rng);
                *v = Complex64::new(self.sigma * x, 0.0);
            }
        } else {
            let s = self.sigma * std::f64::consts::FRAC_1_SQRT_2;
            for v in out.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut self.rng);
                let im: f64 = StandardNormal.sample(&mut self.rng);
                *v = Complex64::new(s * re, s * im);
            }
        }
    }
}

pub fn sample_white_noise(domain: &DiscreteDomain, dt: f64, steps: usize, seed: u64) -> Result<SourceTrajectory> {
    sample_white_noise_realization(&NoiseSpec::white(domain.clone(), dt, seed), steps, 0)
}

/// Unfiltered white noise drawn with the seed and sample type of `spec`.
pub fn sample_white_noise_realization(
    spec: &NoiseSpec,
    steps: usize,
    realization_index: u64,
) -> Result<SourceTrajectory> {
    if !(spec.dt > 0.0) || steps == 0 {
        return Err(Error::InvalidArgument("need dt > 0 and at least one step".into()));
    }
    let mut gen = WhiteNoise::new(&spec.domain, spec.dt, spec.seed, realization_index, spec.real);
    let n = spec.domain.len();
    let values = (0..steps)
        .map(|_| {
            let mut v = vec![ZERO; n];
            gen.fill(&mut v);
            v
        })
        .collect();
    Ok(SourceTrajectory { dt: spec.dt, steps, values, spec: spec.clone(), realization_index })
}

/// Temporal convolution with `Φ`, then band, multiplier and window.
pub fn apply_filters(
    dec: &SpectralDecomposition,
    w: &SourceTrajectory,
    spec: &NoiseSpec,
) -> Result<SourceTrajectory> {
    if spec.taps.len() > w.steps {
        return Err(Error::InvalidArgument(format!(
            "filter of {} taps is longer than the {} step trajectory",
            spec.taps.len(),
            w.steps
        )));
    }
    if (spec.dt - w.dt).abs() > 1e-12 * w.dt {
        return Err(Error::InvalidArgument("filter dt differs from trajectory dt".into()));
    }
    let filter = SpatialFilter::new(dec, spec)?;
    let n = spec.domain.len();
    let mut values = Vec::with_capacity(w.steps);
    for step in 0..w.steps {
        let mut acc = vec![ZERO; n];
        for (j, &tap) in spec.taps.iter().enumerate().take(step + 1) {
            let c = tap * spec.dt;
            acc.iter_mut().zip(&w.values[step - j]).for_each(|(a, &v)| *a += v * c);
        }
        let mut modes = dec.forward(&acc)?;
        filter.apply_modes(dec, &mut modes)?;
        values.push(dec.inverse(&modes)?);
    }
    Ok(SourceTrajectory {
        dt: w.dt,
        steps: w.steps,
        values,
        spec: spec.clone(),
        realization_index: w.realization_index,
    })
}

/// Step-by-step generator of filtered forcing in mode space. Produces the
/// same sequence as `apply_filters(sample_white_noise_realization(..))`
/// without storing the trajectory.
#[derive(Debug, Clone)]
pub struct NoiseStream<'a> {
    dec: &'a SpectralDecomposition,
    filter: SpatialFilter,
    taps: Vec<f64>,
    dt: f64,
    gen: WhiteNoise,
    history: VecDeque<Vec<Complex64>>,
    grid: Vec<Complex64>,
}

impl<'a> NoiseStream<'a> {
    pub fn new(dec: &'a SpectralDecomposition, spec: &NoiseSpec, realization: u64) -> Result<Self> {
        let filter = SpatialFilter::new(dec, spec)?;
        Ok(Self {
            dec,
            filter,
            taps: spec.taps.clone(),
            dt: spec.dt,
            gen: WhiteNoise::new(&spec.domain, spec.dt, spec.seed, realization, spec.real),
            history: VecDeque::with_capacity(spec.taps.len()),
            grid: vec![ZERO; spec.domain.len()],
        })
    }

    /// Mode coefficients of the next forcing sample.
    pub fn next_modes(&mut self, out: &mut [Complex64]) -> Result<()> {
        self.gen.fill(&mut self.grid);
        let mut modes = self.dec.forward(&self.grid)?;
        self.filter.apply_modes(self.dec, &mut modes)?;
        if self.history.len() == self.taps.len() {
            self.history.pop_back();
        }
        self.history.push_front(modes);
        out.iter_mut().for_each(|v| *v = ZERO);
        for (j, past) in self.history.iter().enumerate() {
            let c = self.taps[j] * self.dt;
            out.iter_mut().zip(past).for_each(|(o, &v)| *o += v * c);
        }
        Ok(())
    }
}

/// Phase-space density on the doubled position grid and half-integer
/// momentum lattice, normalised so that `Σ density · cell_measure` equals
/// the field energy.
#[derive(Debug, Clone)]
pub struct PowerSpectrum {
    pub epsilon: f64,
    /// Position grid points per axis (twice the mode count).
    pub x_counts: Vec<usize>,
    pub x_spacing: Vec<f64>,
    /// Momentum rows per axis; row `r` has doubled index `s = r - (n - 1)`.
    pub xi_counts: Vec<usize>,
    /// `ξ = xi_step · s`.
    pub xi_step: Vec<f64>,
    pub density: Vec<f64>,
    pub cell_measure: f64,
}

impl PowerSpectrum {
    pub fn xi(&self, row: &[usize]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(a, &r)| {
                let half = (self.xi_counts[a] as i64 - 1) / 2;
                self.xi_step[a] * (r as i64 - half) as f64
            })
            .collect()
    }

    fn xi_len(&self) -> usize {
        self.xi_counts.iter().product()
    }

    pub fn value(&self, x_flat: usize, xi_flat: usize) -> f64 {
        self.density[x_flat * self.xi_len() + xi_flat]
    }

    /// Unflattens a momentum row index.
    pub fn xi_row(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.xi_counts.len()];
        let mut rest = flat;
        for a in (0..out.len()).rev() {
            out[a] = rest % self.xi_counts[a];
            rest /= self.xi_counts[a];
        }
        out
    }

    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_measure
    }

    /// Position average of the density per momentum row.
    pub fn marginal_xi(&self) -> Vec<f64> {
        let nx: usize = self.x_counts.iter().product();
        let nxi = self.xi_len();
        let mut out = vec![0.0; nxi];
        for x in 0..nx {
            for (r, o) in out.iter_mut().enumerate() {
                *o += self.density[x * nxi + r];
            }
        }
        out.iter_mut().for_each(|v| *v /= nx as f64);
        out
    }
}

fn check_translation_domain(dec: &SpectralDecomposition) -> Result<()> {
    match dec.domain().kind {
        DomainKind::Circle1d | DomainKind::Torus2d => Ok(()),
        DomainKind::IntervalNeumann1d => Err(Error::Unsupported(
            "Wigner transform needs a translation-invariant domain".into(),
        )),
    }
}

fn empty_spectrum(dec: &SpectralDecomposition, epsilon: f64) -> PowerSpectrum {
    let dom = dec.domain();
    let x_counts: Vec<usize> = dom.counts.iter().map(|n| 2 * n).collect();
    let x_spacing: Vec<f64> = dom.extent.iter().zip(&x_counts).map(|(l, n)| l / *n as f64).collect();
    let xi_counts: Vec<usize> = dom.counts.iter().map(|n| 2 * n - 1).collect();
    let xi_step: Vec<f64> = dom.extent.iter().map(|l| epsilon * PI / l).collect();
    let cell: f64 = dom
        .extent
        .iter()
        .zip(&x_spacing)
        .map(|(l, dx)| dx * 2.0 * PI * epsilon / l)
        .product();
    let len = x_counts.iter().product::<usize>() * xi_counts.iter().product::<usize>();
    PowerSpectrum { epsilon, x_counts, x_spacing, xi_counts, xi_step, density: vec![0.0; len], cell_measure: cell }
}

/// Adds the Wigner density of the field with mode coefficients `coeffs`.
fn accumulate_wigner(dec: &SpectralDecomposition, coeffs: &[Complex64], weight: f64, out: &mut PowerSpectrum) {
    let dom = dec.domain();
    let dim = dom.dim();
    let n: Vec<i64> = dom.counts.iter().map(|&c| c as i64).collect();
    let half: Vec<i64> = n.iter().map(|v| (v - 1) / 2).collect();
    let (n0, n1) = (n[0] as usize, if dim == 2 { n[1] as usize } else { 1 });
    // Coefficients on a dense wave-vector grid.
    let mut grid = vec![ZERO; n0 * n1];
    for (m, &c) in coeffs.iter().enumerate() {
        let w = dec.wave_vector(m).expect("Fourier basis");
        let i0 = (w[0] + half[0]) as usize;
        let i1 = if dim == 2 { (w[1] + half[1]) as usize } else { 0 };
        grid[i0 * n1 + i1] = c;
    }
    let (x0, x1) = (2 * n0, if dim == 2 { 2 * n1 } else { 1 });
    let (s0n, s1n) = (2 * n0 - 1, if dim == 2 { 2 * n1 - 1 } else { 1 });
    let vol: f64 = dom.extent.iter().product();
    let dens_scale: f64 = dom.extent.iter().map(|l| l / (2.0 * PI * out.epsilon)).product();
    let nxi = s0n * s1n;
    let mut buf = vec![ZERO; x0 * x1];
    let h1 = if dim == 2 { half[1] } else { 0 };
    for r0 in 0..s0n {
        let s0 = r0 as i64 - 2 * half[0];
        for r1 in 0..s1n {
            let s1 = if dim == 2 { r1 as i64 - 2 * half[1] } else { 0 };
            buf.iter_mut().for_each(|v| *v = ZERO);
            let mut any = false;
            for k0 in -half[0]..=half[0] {
                let q0 = s0 - k0;
                if q0.abs() > half[0] {
                    continue;
                }
                for k1 in -h1..=h1 {
                    let q1 = s1 - k1;
                    if q1.abs() > h1 {
                        continue;
                    }
                    let a = grid[(k0 + half[0]) as usize * n1 + (k1 + h1) as usize];
                    let b = grid[(q0 + half[0]) as usize * n1 + (q1 + h1) as usize];
                    let p = a * b.conj();
                    if p == ZERO {
                        continue;
                    }
                    any = true;
                    let d0 = (k0 - q0).rem_euclid(x0 as i64) as usize;
                    let d1 = (k1 - q1).rem_euclid(x1 as i64) as usize;
                    buf[d0 * x1 + d1] += p;
                }
            }
            if !any {
                continue;
            }
            fft_nd(&mut buf, &[x0, x1][..dim.max(1)], false);
            let row = r0 * s1n + r1;
            for (xf, v) in buf.iter().enumerate() {
                out.density[xf * nxi + row] += weight * v.re / vol * dens_scale;
            }
        }
    }
}

/// Wigner density of a single field given by grid values.
pub fn wigner_transform(dec: &SpectralDecomposition, field: &[Complex64], epsilon: f64) -> Result<PowerSpectrum> {
    check_translation_domain(dec)?;
    let coeffs = dec.forward(field)?;
    let mut out = empty_spectrum(dec, epsilon);
    accumulate_wigner(dec, &coeffs, 1.0, &mut out);
    Ok(out)
}

/// Average of the Wigner densities over all steps of all realizations.
pub fn empirical_power_spectrum(
    dec: &SpectralDecomposition,
    realizations: &[SourceTrajectory],
    epsilon: f64,
) -> Result<PowerSpectrum> {
    check_translation_domain(dec)?;
    if realizations.len() < 2 {
        return Err(Error::InvalidArgument("need at least two realizations".into()));
    }
    let total: usize = realizations.iter().map(|r| r.steps).sum();
    let mut out = empty_spectrum(dec, epsilon);
    for r in realizations {
        for v in &r.values {
            let coeffs = dec.forward(v)?;
            accumulate_wigner(dec, &coeffs, 1.0 / total as f64, &mut out);
        }
    }
    Ok(out)
}
