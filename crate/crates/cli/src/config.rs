use std::path::PathBuf;

use corrlab_core::noise::{Band, Multiplier, NoiseSpec, Window};
use corrlab_core::propagation::{DampedWaveModel, ModelSpec, Variant};
use corrlab_core::rays::HamiltonianField;
use corrlab_core::spectral::DiscreteDomain;
use corrlab_core::waveguide::{DispersionOptions, VelocityProfile};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WhiteNoiseGreen,
    ExactScalar,
    BandedNoiseSemiclassical,
    TwoComponentSuppression,
    WaveguideDispersion,
    RayTraveltime,
    ErgodicConvergence,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::WhiteNoiseGreen,
        Scenario::ExactScalar,
        Scenario::BandedNoiseSemiclassical,
        Scenario::TwoComponentSuppression,
        Scenario::WaveguideDispersion,
        Scenario::RayTraveltime,
        Scenario::ErgodicConvergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::WhiteNoiseGreen => "white_noise_green",
            Scenario::ExactScalar => "exact_scalar",
            Scenario::BandedNoiseSemiclassical => "banded_noise_semiclassical",
            Scenario::TwoComponentSuppression => "two_component_suppression",
            Scenario::WaveguideDispersion => "waveguide_dispersion",
            Scenario::RayTraveltime => "ray_traveltime",
            Scenario::ErgodicConvergence => "ergodic_convergence",
        }
    }

    pub fn reproduces(self) -> &'static str {
        match self {
            Scenario::WhiteNoiseGreen => "derivative identity: dC/dtau = -G_a/(4a) under white forcing",
            Scenario::ExactScalar => "exact correlation formula for the first-order scalar model",
            Scenario::BandedNoiseSemiclassical => "Monte Carlo correlation vs covariance operator, travel-time pick",
            Scenario::TwoComponentSuppression => "cross-branch correlation suppression as epsilon -> 0",
            Scenario::WaveguideDispersion => "trapped spectrum and dispersion curves of a layered waveguide",
            Scenario::RayTraveltime => "Hamiltonian ray tracing: travel time, symplecticity, energy",
            Scenario::ErgodicConvergence => "O(1/T) variance decay of time-averaged correlations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub modes: usize,
    #[serde(default = "two_pi")]
    pub circumference: f64,
    pub variant: Variant,
    #[serde(default = "one")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub dt: f64,
    #[serde(default)]
    pub band: Band,
    /// Defaults to the single tap `1/dt` (white in time).
    #[serde(default)]
    pub taps: Option<Vec<f64>>,
    #[serde(default)]
    pub multiplier: Multiplier,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub real: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagBlock {
    pub step: f64,
    pub count: usize,
}

impl LagBlock {
    pub fn positive(&self) -> Vec<f64> {
        (1..=self.count).map(|i| i as f64 * self.step).collect()
    }

    pub fn symmetric(&self) -> Vec<f64> {
        corrlab_core::correlation::symmetric_lags(self.step, self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    /// Record length in time units.
    pub duration: f64,
    pub burn_in: f64,
    #[serde(default)]
    pub pick_band: Option<(f64, f64)>,
    #[serde(default)]
    pub expected_travel_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicBlock {
    pub lag_steps: usize,
    pub burn_in: f64,
    #[serde(default = "bootstrap")]
    pub bootstrap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressionBlock {
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideBlock {
    pub profile: VelocityProfile,
    #[serde(default)]
    pub x: f64,
    pub xi: (f64, f64, usize),
    #[serde(default)]
    pub options: Option<DispersionOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayBlock {
    pub field: HamiltonianField,
    pub start: (f64, f64),
    pub t_end: f64,
    #[serde(default = "ray_tol")]
    pub tol: f64,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub expected_travel_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub noise: Option<NoiseBlock>,
    #[serde(default)]
    pub stations: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lags: Option<LagBlock>,
    #[serde(default)]
    pub durations: Option<Vec<f64>>,
    #[serde(default)]
    pub realizations: Option<usize>,
    #[serde(default)]
    pub ensemble: Option<EnsembleBlock>,
    #[serde(default)]
    pub ergodic: Option<ErgodicBlock>,
    #[serde(default)]
    pub suppression: Option<SuppressionBlock>,
    #[serde(default)]
    pub waveguide: Option<WaveguideBlock>,
    #[serde(default)]
    pub rays: Option<RayBlock>,
}

fn two_pi() -> f64 {
    2.0 * std::f64::consts::PI
}

fn one() -> f64 {
    1.0
}

fn bootstrap() -> usize {
    200
}

fn ray_tol() -> f64 {
    1e-10
}

#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn need<'a, T>(v: &'a Option<T>, field: &str, s: Scenario) -> Result<&'a T, ValidationError> {
    v.as_ref().ok_or_else(|| ValidationError(format!("scenario {} requires field `{field}`", s.name())))
}

fn fail<T>(msg: impl Into<String>) -> Result<T, ValidationError> {
    Err(ValidationError(msg.into()))
}

impl ScenarioConfig {
    /// Parses a config, or the `config` entry of an emitted manifest.
    pub fn parse(text: &str) -> Result<Self, ValidationError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ValidationError(format!("malformed JSON: {e}")))?;
        let value = match value.get("config") {
            Some(inner) if value.get("config_hash").is_some() => inner.clone(),
            _ => value,
        };
        let cfg: ScenarioConfig = serde_json::from_value(value).map_err(|e| ValidationError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(bytes))
    }

    pub fn model(&self) -> Result<DampedWaveModel, ValidationError> {
        let m = need(&self.model, "model", self.scenario)?;
        let domain = DiscreteDomain::circle_with_extent(m.modes, m.circumference)
            .map_err(|e| ValidationError(format!("model: {e}")))?;
        DampedWaveModel::new(ModelSpec { domain, variant: m.variant.clone(), epsilon: m.epsilon })
            .map_err(|e| ValidationError(format!("model: {e}")))
    }

    pub fn noise(&self, model: &DampedWaveModel) -> Result<NoiseSpec, ValidationError> {
        let n = need(&self.noise, "noise", self.scenario)?;
        let mut spec = NoiseSpec::white(model.spec.domain.clone(), n.dt, self.seed);
        if let Some(t) = &n.taps {
            spec.taps = t.clone();
        }
        spec.band = n.band.clone();
        spec.multiplier = n.multiplier.clone();
        spec.window = n.window.clone();
        spec.epsilon = model.spec.epsilon;
        spec.real = n.real;
        spec.validate().map_err(|e| ValidationError(format!("noise: {e}")))?;
        Ok(spec)
    }

    fn station_pair(&self) -> Result<&[Vec<f64>], ValidationError> {
        let st = need(&self.stations, "stations", self.scenario)?;
        if st.len() < 2 || st.iter().any(|p| p.len() != 1 || !p[0].is_finite()) {
            return fail("`stations` needs at least two one-dimensional points");
        }
        Ok(st)
    }

    fn lag_block(&self) -> Result<&LagBlock, ValidationError> {
        let l = need(&self.lags, "lags", self.scenario)?;
        if !(l.step > 0.0) || l.count == 0 {
            return fail("`lags` needs a positive step and count");
        }
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let s = self.scenario;
        match s {
            Scenario::WhiteNoiseGreen => {
                let m = self.model()?;
                if !matches!(m.spec.variant, Variant::SecondOrder { .. }) || m.constant_damping().is_none() {
                    return fail("white_noise_green needs a second_order model with constant damping");
                }
                self.station_pair()?;
                self.lag_block()?;
                if self.noise.is_some() {
                    self.noise(&m)?;
                }
            }
            Scenario::ExactScalar => {
                let m = self.model()?;
                if !m.is_scalar() {
                    return fail("exact_scalar needs a first_order_scalar model");
                }
                self.noise(&m)?;
                self.station_pair()?;
                self.lag_block()?;
            }
            Scenario::BandedNoiseSemiclassical => {
                let m = self.model()?;
                self.noise(&m)?;
                self.station_pair()?;
                self.lag_block()?;
                let e = need(&self.ensemble, "ensemble", s)?;
                if !(e.duration > 0.0 && e.burn_in >= 0.0) {
                    return fail("`ensemble` needs a positive duration and nonnegative burn_in");
                }
                if need(&self.realizations, "realizations", s)? < &2 {
                    return fail("`realizations` must be at least 2");
                }
            }
            Scenario::TwoComponentSuppression => {
                let m = self.model()?;
                if !matches!(m.spec.variant, Variant::TwoComponent { .. }) {
                    return fail("two_component_suppression needs a two_component model");
                }
                self.noise(&m)?;
                self.station_pair()?;
                self.lag_block()?;
                let e = need(&self.suppression, "suppression", s)?;
                if e.epsilons.is_empty() || e.epsilons.iter().any(|&v| !(v > 0.0)) {
                    return fail("`suppression.epsilons` must be nonempty and positive");
                }
            }
            Scenario::WaveguideDispersion => {
                let w = need(&self.waveguide, "waveguide", s)?;
                w.profile.validate().map_err(|e| ValidationError(format!("waveguide.profile: {e}")))?;
                let (lo, hi, n) = w.xi;
                if !(lo > 0.0 && hi > lo) || n < 3 {
                    return fail("`waveguide.xi` must be (lo > 0, hi > lo, n ≥ 3)");
                }
            }
            Scenario::RayTraveltime => {
                let r = need(&self.rays, "rays", s)?;
                r.field.validate().map_err(|e| ValidationError(format!("rays.field: {e}")))?;
                if !(r.t_end.is_finite() && r.t_end != 0.0) {
                    return fail("`rays.t_end` must be finite and nonzero");
                }
            }
            Scenario::ErgodicConvergence => {
                let m = self.model()?;
                self.noise(&m)?;
                self.station_pair()?;
                need(&self.ergodic, "ergodic", s)?;
                let d = need(&self.durations, "durations", s)?;
                if d.len() < 3 {
                    return fail("`durations` needs at least three entries");
                }
                if need(&self.realizations, "realizations", s)? < &4 {
                    return fail("`realizations` must be at least 4");
                }
            }
        }
        Ok(())
    }
}
