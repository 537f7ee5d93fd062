//! Damped evolution `Ω(t)`, causal solutions driven by a source, and the
//! causal Green's function of `u_tt + 2a u_t - Δu = f`.
//!
//! Every constant-coefficient variant is advanced mode by mode with the
//! exact 2×2 (or scalar) propagator, so the group law holds to rounding.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise::{NoiseStream, SourceTrajectory};
use crate::spectral::{wave_kernels, DiscreteDomain, SpectralDecomposition};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Row-major 2×2 complex matrix.
pub type Mat2 = [Complex64; 4];

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

pub fn mat2_apply(m: &Mat2, x: Complex64, y: Complex64) -> (Complex64, Complex64) {
    (m[0] * x + m[1] * y, m[2] * x + m[3] * y)
}

pub fn mat2_adjoint(m: &Mat2) -> Mat2 {
    [m[0].conj(), m[2].conj(), m[1].conj(), m[3].conj()]
}

fn mat2_norm(m: &Mat2) -> f64 {
    // Largest singular value of a 2×2 matrix.
    let f2: f64 = m.iter().map(|v| v.norm_sqr()).sum();
    let det = (m[0] * m[3] - m[1] * m[2]).norm();
    let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
    ((f2 + disc) / 2.0).sqrt()
}

/// Constant damping or a grid function `a(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Damping {
    Constant(f64),
    Field(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Variant {
    /// `u_t + (i/ε) H₀(εD) u + k u = f` with `H₀(ξ) = Σ_n c_n |ξ|^n`.
    FirstOrderScalar { dispersion: Vec<f64>, damping: f64 },
    /// `u_tt + 2a u_t - Δu = f`, state `(u, u_t)`.
    SecondOrder { damping: Damping },
    /// State `U = (√μ u, -i u_t)` of the constant-damping second-order model.
    TwoComponent { damping: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub domain: DiscreteDomain,
    pub variant: Variant,
    #[serde(default = "one")]
    pub epsilon: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model spec serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A damped model bound to its spectral decomposition.
#[derive(Debug, Clone)]
pub struct DampedWaveModel {
    pub spec: ModelSpec,
    dec: SpectralDecomposition,
    h0: Vec<f64>,
}

/// Model state in mode coefficients. Scalar models leave `second` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub first: Vec<Complex64>,
    pub second: Vec<Complex64>,
}

impl State {
    pub fn zeros(model: &DampedWaveModel) -> Self {
        let n = model.dec.len();
        let m = if model.is_scalar() { 0 } else { n };
        Self { first: vec![ZERO; n], second: vec![ZERO; m] }
    }

    pub fn is_zero(&self) -> bool {
        self.first.iter().chain(&self.second).all(|v| *v == ZERO)
    }
}

impl DampedWaveModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let dec = SpectralDecomposition::laplacian(&spec.domain)?;
        Self::with_decomposition(spec, dec)
    }

    pub fn with_decomposition(spec: ModelSpec, dec: SpectralDecomposition) -> Result<Self> {
        if !(spec.epsilon > 0.0 && spec.epsilon.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        let positive = |a: f64, what: &str| {
            if a > 0.0 && a.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} damping must be strictly positive, got {a}")))
            }
        };
        let mut h0 = vec![0.0; dec.len()];
        match &spec.variant {
            Variant::FirstOrderScalar { dispersion, damping } => {
                positive(*damping, "first-order")?;
                for (h, &mu) in h0.iter_mut().zip(dec.eigenvalues()) {
                    let xi = spec.epsilon * mu.max(0.0).sqrt();
                    *h = dispersion.iter().rev().fold(0.0, |acc, c| acc * xi + c);
                }
            }
            Variant::SecondOrder { damping: Damping::Constant(a) } => positive(*a, "second-order")?,
            Variant::SecondOrder { damping: Damping::Field(a) } => {
                if a.len() != dec.domain().len() {
                    return Err(Error::DimensionMismatch { expected: dec.domain().len(), found: a.len() });
                }
                for &v in a {
                    positive(v, "second-order")?;
                }
            }
            Variant::TwoComponent { damping } => positive(*damping, "two-component")?,
        }
        Ok(Self { spec, dec, h0 })
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.dec
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.spec.variant, Variant::FirstOrderScalar { .. })
    }

    /// Constant damping coefficient, if the model has one.
    pub fn constant_damping(&self) -> Option<f64> {
        match &self.spec.variant {
            Variant::FirstOrderScalar { damping, .. } => Some(*damping),
            Variant::SecondOrder { damping: Damping::Constant(a) } => Some(*a),
            Variant::SecondOrder { damping: Damping::Field(_) } => None,
            Variant::TwoComponent { damping } => Some(*damping),
        }
    }

    pub fn is_spectral_exact(&self) -> bool {
        self.constant_damping().is_some()
    }

    /// Dispersion values `H₀` per sorted mode (first-order models).
    pub fn dispersion(&self) -> &[f64] {
        &self.h0
    }

    /// Exact decay rate of mode `k`, from the eigenvalues of its generator.
    pub fn mode_rate(&self, k: usize) -> f64 {
        let mu = self.dec.eigenvalues()[k];
        match &self.spec.variant {
            Variant::FirstOrderScalar { damping, .. } => *damping,
            _ => {
                let a = self.constant_damping().unwrap_or_else(|| self.max_damping());
                let q2 = mu - a * a;
                if q2 >= 0.0 {
                    a
                } else {
                    a - (-q2).sqrt()
                }
            }
        }
    }

    fn max_damping(&self) -> f64 {
        match &self.spec.variant {
            Variant::SecondOrder { damping: Damping::Field(a) } => a.iter().cloned().fold(0.0, f64::max),
            _ => self.constant_damping().unwrap_or(0.0),
        }
    }

    fn min_damping(&self) -> f64 {
        match &self.spec.variant {
            Variant::SecondOrder { damping: Damping::Field(a) } => a.iter().cloned().fold(f64::INFINITY, f64::min),
            _ => self.constant_damping().unwrap_or(0.0),
        }
    }

    /// Wave models leave the `μ = 0` mode undamped in `u`; it is excluded
    /// from decay statements.
    pub fn is_excluded_mode(&self, k: usize) -> bool {
        !self.is_scalar() && self.dec.eigenvalues()[k] <= 1e-12
    }

    /// `T_att = 1 / (slowest decay rate over non-excluded modes)`.
    pub fn attenuation_time(&self) -> f64 {
        if self.constant_damping().is_none() {
            let a = self.min_damping();
            let mu = self
                .dec
                .eigenvalues()
                .iter()
                .copied()
                .find(|&m| m > 1e-12)
                .unwrap_or(f64::INFINITY);
            let rate = if mu >= a * a { a } else { a - (a * a - mu).sqrt() };
            return 1.0 / rate;
        }
        let rate = (0..self.dec.len())
            .filter(|&k| !self.is_excluded_mode(k))
            .map(|k| self.mode_rate(k))
            .fold(f64::INFINITY, f64::min);
        1.0 / rate
    }

    /// Exact propagator of mode `k` over time `t` (constant coefficients).
    pub fn mode_propagator(&self, k: usize, t: f64) -> Mat2 {
        let mu = self.dec.eigenvalues()[k];
        match &self.spec.variant {
            Variant::FirstOrderScalar { damping, .. } => {
                let z = Complex64::new(-damping * t, -self.h0[k] * t / self.spec.epsilon).exp();
                [z, ZERO, ZERO, ZERO]
            }
            Variant::SecondOrder { damping: Damping::Constant(a) } => {
                let (c, s) = wave_kernels(mu - a * a, t).damped(*a, t);
                [
                    Complex64::new(c + a * s, 0.0),
                    Complex64::new(s, 0.0),
                    Complex64::new(-mu * s, 0.0),
                    Complex64::new(c - a * s, 0.0),
                ]
            }
            Variant::TwoComponent { damping: a } => {
                let (c, s) = wave_kernels(mu - a * a, t).damped(*a, t);
                let off = I * (mu.max(0.0).sqrt() * s);
                [Complex64::new(c + a * s, 0.0), off, off, Complex64::new(c - a * s, 0.0)]
            }
            Variant::SecondOrder { damping: Damping::Field(_) } => {
                panic!("variable damping has no mode propagator")
            }
        }
    }

    /// Undamped wave propagator, used by the splitting path.
    fn free_propagator(&self, k: usize, t: f64) -> Mat2 {
        let mu = self.dec.eigenvalues()[k];
        let v = wave_kernels(mu, t);
        let (c, s) = (v.cos(), v.sinc());
        [
            Complex64::new(c, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(-mu * s, 0.0),
            Complex64::new(c, 0.0),
        ]
    }

    /// Energy `Σ μ|u|² + |u_t|²` (wave models) or `Σ |c|²` (scalar).
    pub fn energy(&self, state: &State) -> f64 {
        match &self.spec.variant {
            Variant::FirstOrderScalar { .. } => state.first.iter().map(|c| c.norm_sqr()).sum(),
            Variant::SecondOrder { .. } => state
                .first
                .iter()
                .zip(&state.second)
                .zip(self.dec.eigenvalues())
                .map(|((u, v), mu)| mu * u.norm_sqr() + v.norm_sqr())
                .sum(),
            Variant::TwoComponent { .. } => {
                state.first.iter().chain(&state.second).map(|c| c.norm_sqr()).sum()
            }
        }
    }

    /// Forcing `f` (mode coefficients) expressed in state form.
    fn forcing_component(&self) -> (bool, Complex64) {
        match &self.spec.variant {
            Variant::FirstOrderScalar { .. } => (true, Complex64::new(1.0, 0.0)),
            Variant::SecondOrder { .. } => (false, Complex64::new(1.0, 0.0)),
            Variant::TwoComponent { .. } => (false, -I),
        }
    }
}

/// `Ω(t) state`.
pub fn evolve(model: &DampedWaveModel, state: &State, t: f64) -> Result<State> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("evolution time {t} must be non-negative")));
    }
    let mut out = state.clone();
    if t == 0.0 {
        return Ok(out);
    }
    match &model.spec.variant {
        Variant::SecondOrder { damping: Damping::Field(a) } => {
            let amax = a.iter().cloned().fold(0.0, f64::max);
            let nsteps = (t * amax / 0.1).ceil().max(1.0) as usize;
            let h = t / nsteps as f64;
            let stepper = SplitStepper::new(model, h)?;
            for _ in 0..nsteps {
                stepper.step(&mut out)?;
            }
        }
        _ => {
            for k in 0..model.dec.len() {
                let m = model.mode_propagator(k, t);
                if model.is_scalar() {
                    out.first[k] = m[0] * state.first[k];
                } else {
                    let (x, y) = mat2_apply(&m, state.first[k], state.second[k]);
                    out.first[k] = x;
                    out.second[k] = y;
                }
            }
        }
    }
    Ok(out)
}

/// Strang splitting `B(h/2) A(h) B(h/2)` for variable damping, with `A` the
/// exact undamped wave step and `B` the pointwise decay `u_t ← e^{-2a h} u_t`.
struct SplitStepper<'a> {
    model: &'a DampedWaveModel,
    free: Vec<Mat2>,
    half_decay: Vec<f64>,
}

impl<'a> SplitStepper<'a> {
    fn new(model: &'a DampedWaveModel, h: f64) -> Result<Self> {
        let a = match &model.spec.variant {
            Variant::SecondOrder { damping: Damping::Field(a) } => a,
            _ => return Err(Error::Unsupported("splitting is only for variable damping".into())),
        };
        Ok(Self {
            model,
            free: (0..model.dec.len()).map(|k| model.free_propagator(k, h)).collect(),
            half_decay: a.iter().map(|&v| (-v * h).exp()).collect(),
        })
    }

    fn damp(&self, v: &mut Vec<Complex64>) -> Result<()> {
        let mut grid = self.model.dec.inverse(v)?;
        grid.iter_mut().zip(&self.half_decay).for_each(|(g, d)| *g *= d);
        *v = self.model.dec.forward(&grid)?;
        Ok(())
    }

    fn step(&self, s: &mut State) -> Result<()> {
        self.damp(&mut s.second)?;
        for (k, m) in self.free.iter().enumerate() {
            let (x, y) = mat2_apply(m, s.first[k], s.second[k]);
            s.first[k] = x;
            s.second[k] = y;
        }
        self.damp(&mut s.second)
    }
}

/// Source of forcing samples in mode space.
pub trait Forcing {
    fn next_modes(&mut self, out: &mut [Complex64]) -> Result<()>;
}

impl Forcing for NoiseStream<'_> {
    fn next_modes(&mut self, out: &mut [Complex64]) -> Result<()> {
        NoiseStream::next_modes(self, out)
    }
}

/// Replays a stored source trajectory.
pub struct StoredForcing<'a> {
    dec: &'a SpectralDecomposition,
    source: &'a SourceTrajectory,
    next: usize,
}

impl<'a> StoredForcing<'a> {
    pub fn new(dec: &'a SpectralDecomposition, source: &'a SourceTrajectory) -> Self {
        Self { dec, source, next: 0 }
    }
}

impl Forcing for StoredForcing<'_> {
    fn next_modes(&mut self, out: &mut [Complex64]) -> Result<()> {
        let v = self
            .source
            .values
            .get(self.next)
            .ok_or_else(|| Error::InvalidArgument("source trajectory exhausted".into()))?;
        self.next += 1;
        out.copy_from_slice(&self.dec.forward(v)?);
        Ok(())
    }
}

/// Zero forcing, useful for free evolution through the solver.
pub struct NoForcing;

impl Forcing for NoForcing {
    fn next_modes(&mut self, out: &mut [Complex64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = ZERO);
        Ok(())
    }
}

/// Which quantities are recorded at each station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `u` (wave models) or the scalar field.
    #[default]
    Field,
    /// `u` and `u_t`.
    FieldAndVelocity,
    /// Both state components.
    Components,
    /// Branch-projected components `(P₊U)₁, (P₊U)₂, (P₋U)₁, (P₋U)₂`.
    Branches,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub burn_in_steps: usize,
    pub require_stationary: bool,
    pub observable: Observable,
    /// Store full grid snapshots of the first component every `stride` steps.
    pub snapshot_stride: Option<usize>,
    pub initial: Option<State>,
}

impl SolveOptions {
    /// Burn-in of `8·T_att`.
    pub fn stationary(model: &DampedWaveModel, dt: f64) -> Self {
        Self {
            burn_in_steps: (8.0 * model.attenuation_time() / dt).ceil() as usize,
            require_stationary: true,
            observable: Observable::Field,
            snapshot_stride: None,
            initial: None,
        }
    }

    /// Records from `t = 0` with no burn-in.
    pub fn transient() -> Self {
        Self {
            burn_in_steps: 0,
            require_stationary: false,
            observable: Observable::Field,
            snapshot_stride: None,
            initial: None,
        }
    }

    pub fn with_observable(mut self, o: Observable) -> Self {
        self.observable = o;
        self
    }
}

/// Station time series of a propagated field.
#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    pub dt: f64,
    pub steps: usize,
    pub stations: Vec<Vec<f64>>,
    /// Grid index of each station when it sits on a node.
    pub station_indices: Vec<Option<usize>>,
    /// `series[component][station][step]`.
    pub series: Vec<Vec<Vec<Complex64>>>,
    pub snapshots: Vec<Vec<Complex64>>,
    pub start_time: f64,
}

impl FieldTrajectory {
    pub fn station(&self, component: usize, station: usize) -> &[Complex64] {
        &self.series[component][station]
    }

    /// Writes `<name>.bin` (little-endian re/im pairs, component-major) and
    /// a JSON sidecar manifest.
    pub fn export(&self, dir: &Path, name: &str, seed: u64, model_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.series.len() * self.stations.len() * self.steps * 16);
        for comp in &self.series {
            for st in comp {
                for v in st {
                    bytes.extend_from_slice(&v.re.to_le_bytes());
                    bytes.extend_from_slice(&v.im.to_le_bytes());
                }
            }
        }
        std::fs::write(dir.join(format!("{name}.bin")), bytes)?;
        let manifest = serde_json::json!({
            "dt": self.dt,
            "steps": self.steps,
            "start_time": self.start_time,
            "components": self.series.len(),
            "stations": self.stations,
            "seed": seed,
            "model_hash": model_hash,
            "layout": "component, station, step; f64 le re/im",
        });
        std::fs::write(dir.join(format!("{name}.json")), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Branch data of one mode of the two-component model.
#[derive(Debug, Clone)]
pub struct ModeBranches {
    pub mu: f64,
    /// `q = √(μ - a²)`, principal branch.
    pub q: Complex64,
    /// Eigenvalues `h₊ = q - ia`, `h₋ = -q - ia` of `Ĥ_k`.
    pub eigenvalues: [Complex64; 2],
    /// Riesz projectors; both zero for the `μ = 0` block.
    pub projectors: [Mat2; 2],
    pub zero_mode: bool,
}

/// Per-mode generator `Ĥ_k` of the two-component model, `Ω = e^{-itĤ}`.
pub fn two_component_generator(mu: f64, a: f64) -> Mat2 {
    let r = Complex64::new(-mu.max(0.0).sqrt(), 0.0);
    [ZERO, r, r, Complex64::new(0.0, -2.0 * a)]
}

/// Reduces a constant-damping second-order model to its two-component form.
pub fn two_component_reduce(model: &DampedWaveModel) -> Result<DampedWaveModel> {
    match &model.spec.variant {
        Variant::SecondOrder { damping: Damping::Constant(a) } => {
            let spec = ModelSpec {
                domain: model.spec.domain.clone(),
                variant: Variant::TwoComponent { damping: *a },
                epsilon: model.spec.epsilon,
            };
            DampedWaveModel::with_decomposition(spec, model.dec.clone())
        }
        Variant::TwoComponent { .. } => Ok(model.clone()),
        Variant::SecondOrder { damping: Damping::Field(_) } => Err(Error::Unsupported(
            "variable damping has no exact branch diagonalisation".into(),
        )),
        Variant::FirstOrderScalar { .. } => {
            Err(Error::InvalidArgument("only second-order models reduce".into()))
        }
    }
}

/// Branch eigenvalues and projectors of every mode.
pub fn branch_decomposition(model: &DampedWaveModel) -> Result<Vec<ModeBranches>> {
    let a = match &model.spec.variant {
        Variant::TwoComponent { damping } => *damping,
        _ => return Err(Error::InvalidArgument("branch decomposition needs a two-component model".into())),
    };
    model
        .dec
        .eigenvalues()
        .iter()
        .map(|&mu| {
            let q = Complex64::new(mu - a * a, 0.0).sqrt();
            let hp = q - I * a;
            let hm = -q - I * a;
            if mu <= 1e-12 {
                return Ok(ModeBranches {
                    mu,
                    q,
                    eigenvalues: [hp, hm],
                    projectors: [[ZERO; 4], [ZERO; 4]],
                    zero_mode: true,
                });
            }
            if q.norm() < 1e-8 * (1.0 + a) {
                return Err(Error::Unsupported(format!(
                    "critically damped mode μ = {mu} is not diagonalisable"
                )));
            }
            let h = two_component_generator(mu, a);
            let proj = |own: Complex64, other: Complex64| -> Mat2 {
                let d = own - other;
                [(h[0] - other) / d, h[1] / d, h[2] / d, (h[3] - other) / d]
            };
            Ok(ModeBranches {
                mu,
                q,
                eigenvalues: [hp, hm],
                projectors: [proj(hp, hm), proj(hm, hp)],
                zero_mode: false,
            })
        })
        .collect()
}

/// Per-mode step data: `P(dt)` and the forcing column of `dt·P(dt/2)`.
struct Stepper {
    full: Vec<Mat2>,
    kick: Vec<(Complex64, Complex64)>,
}

impl Stepper {
    fn new(model: &DampedWaveModel, dt: f64) -> Self {
        let (first, gain) = model.forcing_component();
        let n = model.dec.len();
        let mut full = Vec::with_capacity(n);
        let mut kick = Vec::with_capacity(n);
        for k in 0..n {
            full.push(model.mode_propagator(k, dt));
            let h = model.mode_propagator(k, 0.5 * dt);
            kick.push(if first {
                (h[0] * gain * dt, ZERO)
            } else {
                (h[1] * gain * dt, h[3] * gain * dt)
            });
        }
        Self { full, kick }
    }

    #[inline]
    fn step(&self, s: &mut State, f: &[Complex64], scalar: bool) {
        if scalar {
            for k in 0..f.len() {
                s.first[k] = self.full[k][0] * s.first[k] + self.kick[k].0 * f[k];
            }
        } else {
            for k in 0..f.len() {
                let m = &self.full[k];
                let (x, y) = (s.first[k], s.second[k]);
                s.first[k] = m[0] * x + m[1] * y + self.kick[k].0 * f[k];
                s.second[k] = m[2] * x + m[3] * y + self.kick[k].1 * f[k];
            }
        }
    }
}

/// Time stepper holding the state and the station evaluation tables.
pub struct CausalSolver<'a> {
    model: &'a DampedWaveModel,
    dt: f64,
    stepper: Option<Stepper>,
    split: Option<(SplitStepper<'a>, SplitStepper<'a>)>,
    pub state: State,
    forcing: Vec<Complex64>,
    station_modes: Vec<Vec<Complex64>>,
    branches: Option<Vec<ModeBranches>>,
    observable: Observable,
}

impl<'a> CausalSolver<'a> {
    pub fn new(model: &'a DampedWaveModel, dt: f64, stations: &[Vec<f64>], observable: Observable) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        let station_modes = stations
            .iter()
            .map(|p| model.dec.evaluate_modes(p))
            .collect::<Result<Vec<_>>>()?;
        let (stepper, split) = if model.is_spectral_exact() {
            (Some(Stepper::new(model, dt)), None)
        } else {
            let a = match &model.spec.variant {
                Variant::SecondOrder { damping: Damping::Field(a) } => a.iter().cloned().fold(0.0, f64::max),
                _ => unreachable!(),
            };
            if dt > 0.1 / a + 1e-15 {
                return Err(Error::InvalidArgument(format!(
                    "variable damping needs dt ≤ 0.1/max a = {}",
                    0.1 / a
                )));
            }
            (None, Some((SplitStepper::new(model, dt)?, SplitStepper::new(model, 0.5 * dt)?)))
        };
        let branches = match observable {
            Observable::Branches => Some(branch_decomposition(model)?),
            _ => None,
        };
        if model.is_scalar() && observable != Observable::Field {
            return Err(Error::InvalidArgument("scalar models only record the field".into()));
        }
        Ok(Self {
            model,
            dt,
            stepper,
            split,
            state: State::zeros(model),
            forcing: vec![ZERO; model.dec.len()],
            station_modes,
            branches,
            observable,
        })
    }

    pub fn components(&self) -> usize {
        match self.observable {
            Observable::Field => 1,
            Observable::FieldAndVelocity | Observable::Components => 2,
            Observable::Branches => 4,
        }
    }

    /// Advances one step using the next forcing sample.
    pub fn step(&mut self, forcing: &mut dyn Forcing) -> Result<()> {
        forcing.next_modes(&mut self.forcing)?;
        if let Some(st) = &self.stepper {
            st.step(&mut self.state, &self.forcing, self.model.is_scalar());
        } else {
            let (full, half) = self.split.as_ref().expect("split stepper");
            full.step(&mut self.state)?;
            let mut kick = State { first: vec![ZERO; self.forcing.len()], second: self.forcing.clone() };
            kick.second.iter_mut().for_each(|v| *v *= self.dt);
            half.step(&mut kick)?;
            for k in 0..self.forcing.len() {
                self.state.first[k] += kick.first[k];
                self.state.second[k] += kick.second[k];
            }
        }
        Ok(())
    }

    /// Station values of every recorded component.
    pub fn observe(&self, out: &mut [Complex64]) {
        let ns = self.station_modes.len();
        let s = &self.state;
        let eval = |coef: &dyn Fn(usize) -> Complex64, st: usize| -> Complex64 {
            self.station_modes[st].iter().enumerate().map(|(k, e)| coef(k) * e).sum()
        };
        for st in 0..ns {
            match self.observable {
                Observable::Field => out[st] = eval(&|k| s.first[k], st),
                Observable::FieldAndVelocity | Observable::Components => {
                    out[st] = eval(&|k| s.first[k], st);
                    out[ns + st] = eval(&|k| s.second[k], st);
                }
                Observable::Branches => {
                    let br = self.branches.as_ref().expect("branches");
                    for b in 0..2 {
                        let c0 = eval(&|k| br[k].projectors[b][0] * s.first[k] + br[k].projectors[b][1] * s.second[k], st);
                        let c1 = eval(&|k| br[k].projectors[b][2] * s.first[k] + br[k].projectors[b][3] * s.second[k], st);
                        out[(2 * b) * ns + st] = c0;
                        out[(2 * b + 1) * ns + st] = c1;
                    }
                }
            }
        }
    }
}

/// Causal solution driven by `forcing`, recorded at `stations` for `steps`
/// steps after the burn-in.
pub fn causal_solve_with(
    model: &DampedWaveModel,
    forcing: &mut dyn Forcing,
    dt: f64,
    steps: usize,
    stations: &[Vec<f64>],
    opts: &SolveOptions,
) -> Result<FieldTrajectory> {
    let burn = opts.burn_in_steps as f64 * dt;
    if opts.require_stationary && burn < 5.0 * model.attenuation_time() {
        return Err(Error::BurnInTooShort { available: burn, required: 5.0 * model.attenuation_time() });
    }
    let mut solver = CausalSolver::new(model, dt, stations, opts.observable)?;
    if let Some(init) = &opts.initial {
        solver.state = init.clone();
    }
    for _ in 0..opts.burn_in_steps {
        solver.step(forcing)?;
    }
    let nc = solver.components();
    let ns = stations.len();
    let mut series = vec![vec![Vec::with_capacity(steps); ns]; nc];
    let mut snapshots = Vec::new();
    let mut obs = vec![ZERO; nc * ns];
    for n in 0..steps {
        if n > 0 {
            solver.step(forcing)?;
        }
        solver.observe(&mut obs);
        for c in 0..nc {
            for st in 0..ns {
                let v = obs[c * ns + st];
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::NonFinite(format!("station series at step {n}")));
                }
                series[c][st].push(v);
            }
        }
        if let Some(stride) = opts.snapshot_stride {
            if n % stride == 0 {
                snapshots.push(model.dec.inverse(&solver.state.first)?);
            }
        }
    }
    Ok(FieldTrajectory {
        dt,
        steps,
        stations: stations.to_vec(),
        station_indices: stations.iter().map(|p| model.dec.domain().node_index(p)).collect(),
        series,
        snapshots,
        start_time: burn,
    })
}

/// Causal solution for a stored source. The first recorded sample is the
/// state after the burn-in steps.
pub fn causal_solve(
    model: &DampedWaveModel,
    source: &SourceTrajectory,
    stations: &[Vec<f64>],
    opts: &SolveOptions,
) -> Result<FieldTrajectory> {
    if source.steps <= opts.burn_in_steps {
        return Err(Error::BurnInTooShort {
            available: source.steps as f64 * source.dt,
            required: opts.burn_in_steps as f64 * source.dt,
        });
    }
    let steps = source.steps - opts.burn_in_steps;
    let mut forcing = StoredForcing::new(&model.dec, source);
    causal_solve_with(model, &mut forcing, source.dt, steps, stations, opts)
}

/// `G_a(t, A, B) = Y(t) Σ_k e^{-at} sin(t q_k)/q_k e_k(A) conj(e_k(B))`.
pub fn greens_function(model: &DampedWaveModel, t: f64, a_pt: &[f64], b_pt: &[f64]) -> Result<Complex64> {
    let a = match &model.spec.variant {
        Variant::SecondOrder { damping: Damping::Constant(a) } | Variant::TwoComponent { damping: a } => *a,
        _ => return Err(Error::Unsupported("Green's function needs constant second-order damping".into())),
    };
    if t <= 0.0 {
        return Ok(ZERO);
    }
    let ea = model.dec.evaluate_modes(a_pt)?;
    let eb = model.dec.evaluate_modes(b_pt)?;
    Ok(model
        .dec
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, &mu)| {
            let (_, s) = wave_kernels(mu - a * a, t).damped(a, t);
            ea[k] * eb[k].conj() * s
        })
        .sum())
}

#[derive(Debug, Clone, Serialize)]
pub struct AttenuationReport {
    /// Measured decay rate (1/T_att when exact).
    pub rate: f64,
    /// Smallest `C` with `‖Ω(t)‖ ≤ C e^{-rate·t}` on the probe grid.
    pub constant: f64,
    pub degenerate: bool,
    pub excluded_modes: usize,
}

/// Decay of `Ω` on `[0, horizon]`. Without a probe state, the rate comes
/// from the spectral radius of each implemented mode propagator. With a
/// probe, it is the regression slope of the evolved energy norm.
pub fn attenuation_check(model: &DampedWaveModel, horizon: f64, probe: Option<&State>) -> Result<AttenuationReport> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let samples = 64;
    let times: Vec<f64> = (1..=samples).map(|i| horizon * i as f64 / samples as f64).collect();
    let excluded = (0..model.dec.len()).filter(|&k| model.is_excluded_mode(k)).count();
    if let Some(state) = probe {
        if state.is_zero() {
            return Ok(AttenuationReport { rate: f64::NAN, constant: f64::NAN, degenerate: true, excluded_modes: excluded });
        }
        let mut st = state.clone();
        for k in 0..model.dec.len() {
            if model.is_excluded_mode(k) {
                st.first[k] = ZERO;
                if !st.second.is_empty() {
                    st.second[k] = ZERO;
                }
            }
        }
        let e0 = model.energy(&st).sqrt();
        if e0 == 0.0 {
            return Ok(AttenuationReport { rate: f64::NAN, constant: f64::NAN, degenerate: true, excluded_modes: excluded });
        }
        let mut logs = Vec::with_capacity(samples);
        for &t in &times {
            let e = model.energy(&evolve(model, &st, t)?).sqrt() / e0;
            logs.push(e.ln());
        }
        let (_, slope, _) = crate::util::linear_fit(&times, &logs);
        let rate = -slope;
        let constant = times
            .iter()
            .zip(&logs)
            .map(|(t, l)| (l + rate * t).exp())
            .fold(1.0, f64::max);
        return Ok(AttenuationReport { rate, constant, degenerate: false, excluded_modes: excluded });
    }
    if !model.is_spectral_exact() {
        return Err(Error::Unsupported("operator probe needs constant coefficients".into()));
    }
    let mut rate = f64::INFINITY;
    for k in (0..model.dec.len()).filter(|&k| !model.is_excluded_mode(k)) {
        let m = model.mode_propagator(k, horizon);
        let rho = if model.is_scalar() {
            m[0].norm()
        } else {
            let tr = m[0] + m[3];
            let det = m[0] * m[3] - m[1] * m[2];
            let disc = (tr * tr - 4.0 * det).sqrt();
            ((tr + disc) / 2.0).norm().max(((tr - disc) / 2.0).norm())
        };
        rate = rate.min(-rho.ln() / horizon);
    }
    let mut constant: f64 = 1.0;
    for &t in &times {
        for k in (0..model.dec.len()).filter(|&k| !model.is_excluded_mode(k)) {
            let m = model.mode_propagator(k, t);
            let norm = if model.is_scalar() {
                m[0].norm()
            } else {
                // Energy norm: conjugate by diag(√μ, 1) on (u, u_t).
                let w = match model.spec.variant {
                    Variant::SecondOrder { .. } => model.dec.eigenvalues()[k].sqrt(),
                    _ => 1.0,
                };
                let scaled = [m[0], m[1] * w, m[2] / w, m[3]];
                mat2_norm(&scaled)
            };
            constant = constant.max(norm * (rate * t).exp());
        }
    }
    Ok(AttenuationReport { rate, constant, degenerate: false, excluded_modes: excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    fn circle_model(n: usize, variant: Variant) -> DampedWaveModel {
        DampedWaveModel::new(ModelSpec { domain: DiscreteDomain::circle(n).unwrap(), variant, epsilon: 1.0 }).unwrap()
    }

    /// Matrix exponential by scaling and squaring of a truncated Taylor
    /// series, independent of the kernel formulas.
    fn expm2(m: Matrix2<Complex64>, t: f64) -> Matrix2<Complex64> {
        let s = 20;
        let a = m * Complex64::new(t / 2f64.powi(s), 0.0);
        let mut term = Matrix2::identity();
        let mut sum = Matrix2::identity();
        for n in 1..20 {
            term = term * a / Complex64::new(n as f64, 0.0);
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let m = circle_model(5, Variant::SecondOrder { damping: Damping::Constant(0.5) });
        let mut s = State::zeros(&m);
        s.first[2] = Complex64::new(1.0, 2.0);
        s.second[3] = Complex64::new(-1.0, 0.5);
        assert_eq!(evolve(&m, &s, 0.0).unwrap(), s);
        assert!(evolve(&m, &s, -1.0).is_err());
    }

    #[test]
    fn first_order_mode_factor() {
        let m = circle_model(5, Variant::FirstOrderScalar { dispersion: vec![0.0, 0.0, 1.0], damping: 0.5 });
        let k = (0..5).find(|&k| m.decomposition().wave_vector(k).unwrap()[0] == 1).unwrap();
        let f = m.mode_propagator(k, 2.0)[0];
        let expect = Complex64::new(-1.0, -2.0).exp();
        assert!((f - expect).norm() < 1e-15);
    }

    #[test]
    fn second_order_matches_companion_exponential() {
        let a = 0.7;
        let m = circle_model(5, Variant::SecondOrder { damping: Damping::Constant(a) });
        let k = m.decomposition().eigenvalues().iter().position(|&mu| (mu - 4.0).abs() < 1e-12).unwrap();
        let comp = Matrix2::new(
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(-4.0, 0.0),
            Complex64::new(-2.0 * a, 0.0),
        );
        for &t in &[0.3, 1.0, 4.2] {
            let e = expm2(comp, t);
            let p = m.mode_propagator(k, t);
            for (x, y) in p.iter().zip([e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]]) {
                assert!((x - y).norm() < 1e-10, "t {t}");
            }
        }
    }

    #[test]
    fn overdamped_mode_matches_companion_exponential() {
        let a = 3.0;
        let m = circle_model(5, Variant::SecondOrder { damping: Damping::Constant(a) });
        let comp = Matrix2::new(
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(-2.0 * a, 0.0),
        );
        let p = m.mode_propagator(1, 2.0);
        let e = expm2(comp, 2.0);
        assert!((p[0] - e[(0, 0)]).norm() < 1e-10 && (p[2] - e[(1, 0)]).norm() < 1e-10);
    }

    #[test]
    fn group_law_holds() {
        for variant in [
            Variant::SecondOrder { damping: Damping::Constant(0.5) },
            Variant::TwoComponent { damping: 0.5 },
            Variant::FirstOrderScalar { dispersion: vec![0.0, 1.0], damping: 0.3 },
        ] {
            let m = circle_model(9, variant);
            for k in 0..9 {
                for &(t, s) in &[(0.2, 0.7), (1.5, 2.5), (3.0, 0.01)] {
                    let ab = mat2_mul(&m.mode_propagator(k, t), &m.mode_propagator(k, s));
                    let c = m.mode_propagator(k, t + s);
                    let n = if m.is_scalar() { 1 } else { 4 };
                    for i in 0..n {
                        assert!((ab[i] - c[i]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn greens_function_is_causal_and_starts_linearly() {
        let m = circle_model(5, Variant::SecondOrder { damping: Damping::Constant(0.5) });
        assert_eq!(greens_function(&m, -0.5, &[0.0], &[1.0]).unwrap(), ZERO);
        let t = 1e-7;
        let g = greens_function(&m, t, &[0.0], &[1.0]).unwrap() / t;
        let ea = m.decomposition().evaluate_modes(&[0.0]).unwrap();
        let eb = m.decomposition().evaluate_modes(&[1.0]).unwrap();
        let delta: Complex64 = ea.iter().zip(&eb).map(|(a, b)| a * b.conj()).sum();
        assert!((g - delta).norm() < 1e-6);
    }

    #[test]
    fn greens_function_matches_companion_oracle() {
        let a = 0.5;
        let m = circle_model(5, Variant::SecondOrder { damping: Damping::Constant(a) });
        let g = greens_function(&m, 1.0, &[0.0], &[0.0]).unwrap();
        // Each mode contributes |e_k(0)|² times the (u, v) → u entry of the
        // companion exponential; here |e_k(0)|² = 1/2π.
        let mut expect = Complex64::new(0.0, 0.0);
        for &mu in m.decomposition().eigenvalues() {
            let comp = Matrix2::new(
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(-mu, 0.0),
                Complex64::new(-2.0 * a, 0.0),
            );
            expect += expm2(comp, 1.0)[(0, 1)] / (2.0 * std::f64::consts::PI);
        }
        assert!((g - expect).norm() < 1e-10);
    }

    #[test]
    fn attenuation_rates() {
        let m = circle_model(7, Variant::FirstOrderScalar { dispersion: vec![0.0, 0.0, 1.0], damping: 0.4 });
        let r = attenuation_check(&m, 10.0, None).unwrap();
        assert!((r.rate - 0.4).abs() < 1e-12);
        let m = circle_model(7, Variant::SecondOrder { damping: Damping::Constant(0.5) });
        let r = attenuation_check(&m, 6.0, None).unwrap();
        assert!((r.rate - 0.5).abs() < 1e-9, "{}", r.rate);
        assert_eq!(r.excluded_modes, 1);
        let r = attenuation_check(&m, 6.0, Some(&State::zeros(&m))).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn branch_projectors_at_zero_damping_limit() {
        let b = &branch_decomposition(&circle_model(3, Variant::TwoComponent { damping: 1e-300 })).unwrap()[1];
        assert!((b.eigenvalues[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((b.eigenvalues[1] + Complex64::new(1.0, 0.0)).norm() < 1e-12);
        // P₊ = v vᵀ with v = (1, -1)/√2.
        let p = b.projectors[0];
        let expect = [0.5, -0.5, -0.5, 0.5];
        for (x, y) in p.iter().zip(expect) {
            assert!((x - Complex64::new(y, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn branch_projectors_sum_to_identity() {
        let m = circle_model(9, Variant::TwoComponent { damping: 0.5 });
        for b in branch_decomposition(&m).unwrap().iter().filter(|b| !b.zero_mode) {
            let s: Vec<Complex64> = (0..4).map(|i| b.projectors[0][i] + b.projectors[1][i]).collect();
            let id = [1.0, 0.0, 0.0, 1.0];
            for (x, y) in s.iter().zip(id) {
                assert!((x - Complex64::new(y, 0.0)).norm() < 1e-12);
            }
            let pp = mat2_mul(&b.projectors[0], &b.projectors[0]);
            for i in 0..4 {
                assert!((pp[i] - b.projectors[0][i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn reduction_rejects_variable_damping() {
        let m = circle_model(5, Variant::SecondOrder { damping: Damping::Field(vec![0.5; 5]) });
        assert!(two_component_reduce(&m).is_err());
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let m = circle_model(9, Variant::SecondOrder { damping: Damping::Constant(0.5) });
        let tr = causal_solve_with(&m, &mut NoForcing, 0.05, 100, &[vec![0.0], vec![1.0]], &SolveOptions::transient()).unwrap();
        assert!(tr.series.iter().flatten().flatten().all(|v| *v == ZERO));
    }

    #[test]
    fn short_burn_in_is_rejected() {
        let m = circle_model(9, Variant::SecondOrder { damping: Damping::Constant(0.5) });
        let mut opts = SolveOptions::stationary(&m, 0.05);
        opts.burn_in_steps = 10;
        assert!(matches!(
            causal_solve_with(&m, &mut NoForcing, 0.05, 10, &[vec![0.0]], &opts),
            Err(Error::BurnInTooShort { .. })
        ));
    }
}
