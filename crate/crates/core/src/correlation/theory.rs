//! Stationary covariance of the causal solution.
//!
//! With `Ω_k(s) = Σ_i e^{λ_i s} P_i` per mode and the forcing entering the
//! state through `b`, the white-noise covariance is
//! `Π = ∫₀^∞ Ω(s) b F b* Ω(s)* ds`, evaluated from the projectors in closed
//! form. A kernel `K(u) = Σ_m w_m δ(u - u_m) F` then gives
//! `C(τ) = Σ_m w_m Ω(τ - u_m) Π` for `τ ≥ u_m` and `w_m Π Ω(u_m - τ)*`
//! otherwise.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{CorrelationFunction, Pair, Provenance};
use crate::error::{Error, Result};
use crate::noise::{CovarianceKernel, SpatialCovariance};
use crate::propagation::{
    branch_decomposition, mat2_adjoint, mat2_mul, DampedWaveModel, Damping, Mat2, ModeBranches, Observable,
    Variant,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const IDENTITY: Mat2 = [ONE, ZERO, ZERO, ONE];

fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

fn scale(a: &Mat2, s: Complex64) -> Mat2 {
    [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
}

fn norm1(a: &Mat2) -> f64 {
    a.iter().map(|v| v.norm()).sum()
}

/// Eigen-data of one mode generator `A_k` (`d/dt x = A_k x`).
#[derive(Debug, Clone)]
struct ModeGen {
    lam: [Complex64; 2],
    proj: [Mat2; 2],
    diagonalizable: bool,
}

fn mode_generator(model: &DampedWaveModel, k: usize) -> ModeGen {
    let mu = model.decomposition().eigenvalues()[k];
    let a = match &model.spec.variant {
        Variant::FirstOrderScalar { damping, .. } => {
            let lam = Complex64::new(-damping, -model.dispersion()[k] / model.spec.epsilon);
            return ModeGen {
                lam: [lam, ZERO],
                proj: [[ONE, ZERO, ZERO, ZERO], [ZERO, ZERO, ZERO, ONE]],
                diagonalizable: true,
            };
        }
        Variant::SecondOrder { damping: Damping::Constant(a) } => {
            [ZERO, ONE, Complex64::new(-mu, 0.0), Complex64::new(-2.0 * a, 0.0)]
        }
        Variant::TwoComponent { damping } => {
            let r = Complex64::new(0.0, mu.max(0.0).sqrt());
            [ZERO, r, r, Complex64::new(-2.0 * damping, 0.0)]
        }
        Variant::SecondOrder { damping: Damping::Field(_) } => unreachable!(),
    };
    let tr = a[0] + a[3];
    let det = a[0] * a[3] - a[1] * a[2];
    let disc = (tr * tr / 4.0 - det).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = tr / 2.0 - disc;
    let scale_ref = 1.0 + tr.norm() + det.norm().sqrt();
    if (l1 - l2).norm() < 1e-7 * scale_ref {
        return ModeGen { lam: [l1, l2], proj: [IDENTITY, [ZERO; 4]], diagonalizable: false };
    }
    let p = |own: Complex64, other: Complex64| -> Mat2 {
        let d = own - other;
        [(a[0] - other) / d, a[1] / d, a[2] / d, (a[3] - other) / d]
    };
    ModeGen { lam: [l1, l2], proj: [p(l1, l2), p(l2, l1)], diagonalizable: true }
}

fn forcing_vector(model: &DampedWaveModel) -> (Complex64, Complex64) {
    match &model.spec.variant {
        Variant::FirstOrderScalar { .. } => (ONE, ZERO),
        Variant::SecondOrder { .. } => (ZERO, ONE),
        Variant::TwoComponent { .. } => (ZERO, Complex64::new(0.0, -1.0)),
    }
}

#[derive(Debug, Clone)]
enum PiBlocks {
    Diagonal(Vec<Mat2>),
    Dense(Vec<Mat2>),
}

/// Which component combination a station kernel reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// Raw state components.
    Components,
    /// `E[(P_i U)(A, τ) ⊗ (P_j U)(B, 0)*]` for branches `i, j` (0 = +, 1 = −).
    Branch(usize, usize),
}

impl Observation {
    fn transposed(self) -> Self {
        match self {
            Observation::Components => Observation::Components,
            Observation::Branch(i, j) => Observation::Branch(j, i),
        }
    }
}

/// Covariance operator of a model driven by a given kernel.
#[derive(Debug, Clone)]
pub struct CorrelationTheory<'a> {
    model: &'a DampedWaveModel,
    gens: Vec<ModeGen>,
    pi: PiBlocks,
    /// `(u_m, w_m)` with `w_m = dt·Ψ_|m|`.
    taps: Vec<(f64, f64)>,
    pub support: f64,
    branches: Option<Vec<ModeBranches>>,
}

impl<'a> CorrelationTheory<'a> {
    pub fn new(model: &'a DampedWaveModel, kernel: &CovarianceKernel) -> Result<Self> {
        if !model.is_spectral_exact() {
            return Err(Error::Unsupported("variable-coefficient models are not diagonalisable mode-wise".into()));
        }
        let n = model.decomposition().len();
        if kernel.spatial.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: kernel.spatial.dim() });
        }
        let gens: Vec<ModeGen> = (0..n).map(|k| mode_generator(model, k)).collect();
        let (b0, b1) = forcing_vector(model);
        let bb: Mat2 = [b0 * b0.conj(), b0 * b1.conj(), b1 * b0.conj(), b1 * b1.conj()];
        let pi = match &kernel.spatial {
            SpatialCovariance::Diagonal(f) => {
                let mut blocks = Vec::with_capacity(n);
                for k in 0..n {
                    let m = scale(&bb, Complex64::new(f[k], 0.0));
                    blocks.push(if gens[k].diagonalizable {
                        pi_block(&gens[k], &gens[k], &m)?
                    } else {
                        pi_quadrature(model, k, &m)
                    });
                }
                PiBlocks::Diagonal(blocks)
            }
            SpatialCovariance::Dense(f) => {
                if gens.iter().any(|g| !g.diagonalizable) {
                    return Err(Error::Unsupported("dense source covariance needs diagonalisable modes".into()));
                }
                let mut blocks = Vec::with_capacity(n * n);
                for k in 0..n {
                    for kp in 0..n {
                        let m = scale(&bb, f[(k, kp)]);
                        blocks.push(pi_block(&gens[k], &gens[kp], &m)?);
                    }
                }
                PiBlocks::Dense(blocks)
            }
        };
        let jmax = kernel.psi.len() as i64 - 1;
        let taps = (-jmax..=jmax)
            .map(|m| (m as f64 * kernel.dt, kernel.dt * kernel.psi_at(m)))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        let branches = match model.spec.variant {
            Variant::TwoComponent { .. } => Some(branch_decomposition(model)?),
            _ => None,
        };
        Ok(Self { model, gens, pi, taps, support: kernel.support, branches })
    }

    pub fn model(&self) -> &DampedWaveModel {
        self.model
    }

    /// `Π` as a dense matrix on the stacked state `(x_0, y_0, x_1, y_1, ...)`.
    pub fn pi_matrix(&self) -> DMatrix<Complex64> {
        let n = self.gens.len();
        let mut out = DMatrix::from_element(2 * n, 2 * n, ZERO);
        for k in 0..n {
            for kp in 0..n {
                let blk = match &self.pi {
                    PiBlocks::Diagonal(b) if k == kp => b[k],
                    PiBlocks::Diagonal(_) => continue,
                    PiBlocks::Dense(blocks) => blocks[k * n + kp],
                };
                for i in 0..2 {
                    for j in 0..2 {
                        out[(2 * k + i, 2 * kp + j)] = blk[2 * i + j];
                    }
                }
            }
        }
        out
    }

    /// Mode-space covariance block `C(τ)_{kk}` for a mode-diagonal source.
    pub fn mode_block(&self, tau: f64, k: usize) -> Result<Mat2> {
        let pi = match &self.pi {
            PiBlocks::Diagonal(b) => b[k],
            PiBlocks::Dense(_) => return Err(Error::Unsupported("mode blocks need a diagonal source".into())),
        };
        if tau < 0.0 {
            return Ok(mat2_adjoint(&self.mode_block(-tau, k)?));
        }
        let mut acc = [ZERO; 4];
        for &(u, w) in &self.taps {
            let x = if tau >= u {
                mat2_mul(&self.model.mode_propagator(k, tau - u), &pi)
            } else {
                mat2_mul(&pi, &mat2_adjoint(&self.model.mode_propagator(k, u - tau)))
            };
            acc = add(&acc, &scale(&x, Complex64::new(w, 0.0)));
        }
        Ok(acc)
    }

    fn observation_mats(&self, obs: Observation) -> Result<(Vec<Mat2>, Vec<Mat2>)> {
        let n = self.gens.len();
        match obs {
            Observation::Components => Ok((vec![IDENTITY; n], vec![IDENTITY; n])),
            Observation::Branch(i, j) => {
                let br = self
                    .branches
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("branch observation needs a two-component model".into()))?;
                if i > 1 || j > 1 {
                    return Err(Error::InvalidArgument("branch index must be 0 or 1".into()));
                }
                Ok((br.iter().map(|b| b.projectors[i]).collect(), br.iter().map(|b| b.projectors[j]).collect()))
            }
        }
    }

    fn half_kernel(&self, a: &[f64], b: &[f64], obs: Observation) -> Result<HalfKernel> {
        let dec = self.model.decomposition();
        let ea = dec.evaluate_modes(a)?;
        let eb = dec.evaluate_modes(b)?;
        let (l, r) = self.observation_mats(obs)?;
        let n = ea.len();
        let r_adj: Vec<Mat2> = r.iter().map(mat2_adjoint).collect();
        // y_k = Σ_k' Π_kk' R_k'* conj(e_k'(B)),  z_k' = Σ_k e_k(A) L_k Π_kk'.
        let mut y = vec![[ZERO; 4]; n];
        let mut z = vec![[ZERO; 4]; n];
        match &self.pi {
            PiBlocks::Diagonal(p) => {
                for k in 0..n {
                    y[k] = scale(&mat2_mul(&p[k], &r_adj[k]), eb[k].conj());
                    z[k] = scale(&mat2_mul(&l[k], &p[k]), ea[k]);
                }
            }
            PiBlocks::Dense(blocks) => {
                let la: Vec<Mat2> = (0..n).map(|k| scale(&l[k], ea[k])).collect();
                let rb: Vec<Mat2> = (0..n).map(|k| scale(&r_adj[k], eb[k].conj())).collect();
                for k in 0..n {
                    for kp in 0..n {
                        let blk = &blocks[k * n + kp];
                        y[k] = add(&y[k], &mat2_mul(blk, &rb[kp]));
                        z[kp] = add(&z[kp], &mat2_mul(&la[k], blk));
                    }
                }
            }
        }
        Ok(HalfKernel {
            la: (0..n).map(|k| scale(&l[k], ea[k])).collect(),
            rb: (0..n).map(|k| scale(&r_adj[k], eb[k].conj())).collect(),
            y,
            z,
        })
    }

    /// Station kernel `C_{A,B}(τ)` for one observation type.
    pub fn station_kernel(&self, a: &[f64], b: &[f64], obs: Observation) -> Result<StationKernel<'_, 'a>> {
        Ok(StationKernel {
            theory: self,
            fwd: self.half_kernel(a, b, obs)?,
            bwd: self.half_kernel(b, a, obs.transposed())?,
        })
    }
}

#[derive(Debug, Clone)]
struct HalfKernel {
    la: Vec<Mat2>,
    rb: Vec<Mat2>,
    y: Vec<Mat2>,
    z: Vec<Mat2>,
}

/// Precomputed contraction of `C(τ)` with the mode values at two stations.
pub struct StationKernel<'t, 'a> {
    theory: &'t CorrelationTheory<'a>,
    fwd: HalfKernel,
    bwd: HalfKernel,
}

impl StationKernel<'_, '_> {
    fn eval_half(&self, h: &HalfKernel, tau: f64) -> Mat2 {
        let th = self.theory;
        let mut acc = [ZERO; 4];
        for &(u, w) in &th.taps {
            let mut part = [ZERO; 4];
            for k in 0..h.y.len() {
                if tau >= u {
                    let om = th.model.mode_propagator(k, tau - u);
                    part = add(&part, &mat2_mul(&h.la[k], &mat2_mul(&om, &h.y[k])));
                } else {
                    let om = mat2_adjoint(&th.model.mode_propagator(k, u - tau));
                    part = add(&part, &mat2_mul(&h.z[k], &mat2_mul(&om, &h.rb[k])));
                }
            }
            acc = add(&acc, &scale(&part, Complex64::new(w, 0.0)));
        }
        acc
    }

    /// All component combinations at lag `τ`; entry `2i + j` pairs component
    /// `i` at A with component `j` at B.
    pub fn eval(&self, tau: f64) -> Mat2 {
        if tau >= 0.0 {
            self.eval_half(&self.fwd, tau)
        } else {
            mat2_adjoint(&self.eval_half(&self.bwd, -tau))
        }
    }
}

fn pi_block(gk: &ModeGen, gkp: &ModeGen, m: &Mat2) -> Result<Mat2> {
    let mut acc = [ZERO; 4];
    let mnorm = norm1(m);
    if mnorm == 0.0 {
        return Ok(acc);
    }
    for i in 0..2 {
        for j in 0..2 {
            let num = mat2_mul(&gk.proj[i], &mat2_mul(m, &mat2_adjoint(&gkp.proj[j])));
            if norm1(&num) <= 1e-14 * mnorm {
                continue;
            }
            let den = -(gk.lam[i] + gkp.lam[j].conj());
            if den.norm() < 1e-12 {
                return Err(Error::Unsupported(
                    "source excites an undamped mode; its covariance is not stationary".into(),
                ));
            }
            acc = add(&acc, &scale(&num, 1.0 / den));
        }
    }
    Ok(acc)
}

/// `∫₀^{s_max} Ω(s) M Ω(s)* ds` with `s_max = T_att·ln(1e10)`, composite
/// Simpson. Used for non-diagonalisable (critically damped) modes.
fn pi_quadrature(model: &DampedWaveModel, k: usize, m: &Mat2) -> Mat2 {
    let rate = model.mode_rate(k).max(1e-12);
    let s_max = 1e10f64.ln() / rate;
    let n = 40_000usize;
    let h = s_max / n as f64;
    let mut acc = [ZERO; 4];
    for i in 0..=n {
        let s = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let om = model.mode_propagator(k, s);
        let v = mat2_mul(&om, &mat2_mul(m, &mat2_adjoint(&om)));
        acc = add(&acc, &scale(&v, Complex64::new(w * h / 3.0, 0.0)));
    }
    acc
}

/// Theoretical correlation on a lag grid. Pair components are read
/// according to `observable`, matching the recorded layout of
/// [`crate::propagation::causal_solve_with`].
pub fn theoretical_correlation(
    model: &DampedWaveModel,
    kernel: &CovarianceKernel,
    lags: &[f64],
    stations: &[Vec<f64>],
    pairs: &[Pair],
    observable: Observable,
) -> Result<CorrelationFunction> {
    let theory = CorrelationTheory::new(model, kernel)?;
    let mut values = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (obs, ia, ib) = match observable {
            Observable::Branches => (Observation::Branch(p.ca / 2, p.cb / 2), p.ca % 2, p.cb % 2),
            _ => (Observation::Components, p.ca, p.cb),
        };
        if ia > 1 || ib > 1 || (model.is_scalar() && (ia > 0 || ib > 0)) {
            return Err(Error::InvalidArgument(format!("pair {p:?} has no matching component")));
        }
        let sa = stations.get(p.a).ok_or_else(|| Error::InvalidArgument("missing station".into()))?;
        let sb = stations.get(p.b).ok_or_else(|| Error::InvalidArgument("missing station".into()))?;
        let sk = theory.station_kernel(sa, sb, obs)?;
        values.push(lags.iter().map(|&t| sk.eval(t)[2 * ia + ib]).collect());
    }
    Ok(CorrelationFunction {
        lags: lags.to_vec(),
        stations: stations.to_vec(),
        pairs: pairs.to_vec(),
        values,
        sigma: None,
        provenance: Provenance::TheoreticalQuadrature,
    })
}
