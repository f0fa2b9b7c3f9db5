//! Dimensional anchors, unit conversion and the bare polariton dispersion.
//!
//! The dimensionless model measures time in `τ0 = 2/Ω`, lengths in
//! `l0 = sqrt(ħ/(m_C Ω))` and energies in `ħΩ/2`. In these units the
//! exciton-photon coupling is exactly 2 and the photon kinetic term is `k²`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant in meV·ps.
pub const HBAR_MEV_PS: f64 = 0.658_211_956_9;
/// ħ²/m_e in meV·µm².
pub const HBAR2_OVER_ME_MEV_UM2: f64 = 197.326_980_4 * 197.326_980_4 / 5.109_989_5e8;
/// h·c in eV·nm.
pub const HC_EV_NM: f64 = 1239.841_984;
/// Electron-volt in joule.
pub const EV_J: f64 = 1.602_176_634e-19;

/// Dimensionless Rabi coupling appearing in the rescaled equations.
pub const RABI_COUPLING: f64 = 2.0;

/// Peak intensity quoted in the reference study for the highest pump amplitude.
const QUOTED_PEAK_INTENSITY_MW_UM2: f64 = 2.29;
const QUOTED_PEAK_AMPLITUDE: f64 = 3.7;

#[derive(Debug, Error, PartialEq)]
pub enum UnitsError {
    #[error("unknown quantity tag `{0}`")]
    UnknownTag(String),
    #[error("no resonant wavevector for detuning {0}: lower-branch resonance requires 0 <= delta < 2")]
    NoResonance(f64),
    #[error("inconsistent model parameters: {0}")]
    Inconsistent(String),
}

/// Equation coefficients plus the dimensional anchors they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// ħΩ in meV (half the Rabi splitting).
    pub rabi_half: f64,
    /// m_C / m_e.
    pub photon_mass_ratio: f64,
    /// ħ g_X in meV·µm².
    pub g_x: f64,
    pub gamma_c: f64,
    pub gamma_x: f64,
    /// Pump detuning above the k = 0 lower polariton, in units of ħΩ/2.
    pub delta_lp: f64,
    pub delta_c: f64,
    pub delta_x: f64,
    /// l0 in µm.
    pub length_unit: f64,
    /// τ0 in ps.
    pub time_unit: f64,
    /// Photon wavelength in nm.
    pub photon_wavelength: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::new(0.22)
    }
}

impl ModelParams {
    /// Reference parameter set at pump detuning `delta_lp`, with resonant
    /// exciton and photon and the frame detunings derived from `delta_lp`.
    pub fn new(delta_lp: f64) -> Self {
        let rabi_half = 1.65;
        let photon_mass_ratio = 2.4e-5;
        let (delta_c, delta_x) = frame_detunings(delta_lp);
        Self {
            rabi_half,
            photon_mass_ratio,
            g_x: 0.003,
            gamma_c: 0.02,
            gamma_x: 0.02,
            delta_lp,
            delta_c,
            delta_x,
            length_unit: length_unit_um(rabi_half, photon_mass_ratio),
            time_unit: time_unit_ps(rabi_half),
            photon_wavelength: 854.0,
        }
    }

    /// Returns a copy at another pump detuning, re-deriving the frame detunings.
    pub fn with_delta(&self, delta_lp: f64) -> Self {
        let (delta_c, delta_x) = frame_detunings(delta_lp);
        Self {
            delta_lp,
            delta_c,
            delta_x,
            ..self.clone()
        }
    }

    /// Recomputes l0 and τ0 from `rabi_half` and `photon_mass_ratio`.
    pub fn refresh_anchors(&mut self) {
        self.length_unit = length_unit_um(self.rabi_half, self.photon_mass_ratio);
        self.time_unit = time_unit_ps(self.rabi_half);
    }

    pub fn validate(&self) -> Result<(), UnitsError> {
        let positive = [
            ("rabi_half", self.rabi_half),
            ("photon_mass_ratio", self.photon_mass_ratio),
            ("g_x", self.g_x),
            ("length_unit", self.length_unit),
            ("time_unit", self.time_unit),
            ("photon_wavelength", self.photon_wavelength),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(UnitsError::Inconsistent(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma_c >= 0.0 && self.gamma_x >= 0.0) {
            return Err(UnitsError::Inconsistent("decay rates must be non-negative".into()));
        }
        let l0 = length_unit_um(self.rabi_half, self.photon_mass_ratio);
        let tau0 = time_unit_ps(self.rabi_half);
        if rel_diff(l0, self.length_unit) > 1e-9 {
            return Err(UnitsError::Inconsistent(format!(
                "length_unit {} does not match sqrt(hbar/(m_C Omega)) = {l0}",
                self.length_unit
            )));
        }
        if rel_diff(tau0, self.time_unit) > 1e-9 {
            return Err(UnitsError::Inconsistent(format!(
                "time_unit {} does not match 2/Omega = {tau0}",
                self.time_unit
            )));
        }
        for v in [self.delta_lp, self.delta_c, self.delta_x] {
            if !v.is_finite() {
                return Err(UnitsError::Inconsistent("detunings must be finite".into()));
            }
        }
        Ok(())
    }

    /// Rabi angular frequency Ω in ps⁻¹.
    pub fn omega(&self) -> f64 {
        self.rabi_half / HBAR_MEV_PS
    }

    /// Energy unit ħΩ/2 in meV.
    pub fn energy_unit(&self) -> f64 {
        0.5 * self.rabi_half
    }

    /// g_X in µm²/ps.
    fn g_rate(&self) -> f64 {
        self.g_x / HBAR_MEV_PS
    }

    /// Multiplicative factor from a dimensionless value of `kind` to its
    /// dimensional counterpart.
    pub fn scale(&self, kind: QuantityKind) -> f64 {
        let omega = self.omega();
        match kind {
            QuantityKind::Time => self.time_unit,
            QuantityKind::Length => self.length_unit,
            QuantityKind::Wavevector => 1.0 / self.length_unit,
            QuantityKind::Field => (self.rabi_half / (2.0 * self.g_x)).sqrt(),
            QuantityKind::PumpAmplitude => omega / (2.0 * self.g_rate().sqrt()),
            QuantityKind::PumpFlux => omega * omega / (4.0 * self.g_rate()),
            QuantityKind::Rate => 0.5 * omega,
            QuantityKind::Energy => self.energy_unit(),
        }
    }

    /// Peak pump intensity in mW/µm² for a dimensionless amplitude, using
    /// I = ħω_L |F|² with the photon energy at `photon_wavelength`.
    pub fn peak_intensity(&self, f_inc: f64) -> f64 {
        let photon_energy_j = HC_EV_NM / self.photon_wavelength * EV_J;
        // µm⁻² ps⁻¹ -> µm⁻² s⁻¹, W -> mW
        photon_energy_j * self.scale(QuantityKind::PumpFlux) * f_inc * f_inc * 1e12 * 1e3
    }

    /// Peak intensity on the calibration quoted alongside the reference phase
    /// diagrams (2.29 mW/µm² at amplitude 3.7), which is about twice the
    /// `peak_intensity` conversion. Reported for comparison only.
    pub fn quoted_peak_intensity(&self, f_inc: f64) -> f64 {
        QUOTED_PEAK_INTENSITY_MW_UM2 * (f_inc / QUOTED_PEAK_AMPLITUDE).powi(2)
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// l0 = sqrt(ħ/(m_C Ω)) = sqrt((ħ²/m_e) / (ratio · ħΩ)).
pub fn length_unit_um(rabi_half: f64, photon_mass_ratio: f64) -> f64 {
    (HBAR2_OVER_ME_MEV_UM2 / (photon_mass_ratio * rabi_half)).sqrt()
}

/// τ0 = 2/Ω.
pub fn time_unit_ps(rabi_half: f64) -> f64 {
    2.0 * HBAR_MEV_PS / rabi_half
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantityKind {
    /// τ0 → ps
    Time,
    /// l0 → µm
    Length,
    /// l0⁻¹ → µm⁻¹
    Wavevector,
    /// field amplitude → µm⁻¹
    Field,
    /// pump amplitude → µm⁻¹ ps^-1/2
    PumpAmplitude,
    /// |F|² → µm⁻² ps⁻¹
    PumpFlux,
    /// decay rate → ps⁻¹
    Rate,
    /// energy or detuning → meV
    Energy,
}

impl QuantityKind {
    pub const ALL: [QuantityKind; 8] = [
        QuantityKind::Time,
        QuantityKind::Length,
        QuantityKind::Wavevector,
        QuantityKind::Field,
        QuantityKind::PumpAmplitude,
        QuantityKind::PumpFlux,
        QuantityKind::Rate,
        QuantityKind::Energy,
    ];

    pub fn unit(self) -> &'static str {
        match self {
            QuantityKind::Time => "ps",
            QuantityKind::Length => "um",
            QuantityKind::Wavevector => "1/um",
            QuantityKind::Field => "1/um",
            QuantityKind::PumpAmplitude => "1/(um ps^1/2)",
            QuantityKind::PumpFlux => "1/(um^2 ps)",
            QuantityKind::Rate => "1/ps",
            QuantityKind::Energy => "meV",
        }
    }

    fn name(self) -> &'static str {
        match self {
            QuantityKind::Time => "time",
            QuantityKind::Length => "length",
            QuantityKind::Wavevector => "wavevector",
            QuantityKind::Field => "field",
            QuantityKind::PumpAmplitude => "pump-amplitude",
            QuantityKind::PumpFlux => "pump-flux",
            QuantityKind::Rate => "rate",
            QuantityKind::Energy => "energy",
        }
    }
}

impl fmt::Display for QuantityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantityKind {
    type Err = UnitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuantityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnitsError::UnknownTag(s.to_string()))
    }
}

/// A dimensionless value tagged with what it measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub kind: QuantityKind,
    pub value: f64,
}

impl Quantity {
    pub fn new(kind: QuantityKind, value: f64) -> Self {
        Self { kind, value }
    }
}

pub fn dimensionalize(params: &ModelParams, q: Quantity) -> f64 {
    q.value * params.scale(q.kind)
}

pub fn nondimensionalize(params: &ModelParams, kind: QuantityKind, dimensional: f64) -> Quantity {
    Quantity::new(kind, dimensional / params.scale(kind))
}

/// Parses a `tag=value` pair such as `time=1.5` and dimensionalizes it.
pub fn dimensionalize_tagged(params: &ModelParams, tag: &str, value: f64) -> Result<f64, UnitsError> {
    let kind: QuantityKind = tag.parse()?;
    Ok(dimensionalize(params, Quantity::new(kind, value)))
}

/// Lower and upper polariton energies (meV) at dimensionless wavevector `k`
/// for resonant bare modes, referenced to the k = 0 lower polariton.
pub fn lp_up_dispersion(params: &ModelParams, k: f64) -> (f64, f64) {
    let e_x = params.rabi_half;
    let e_c = e_x + params.energy_unit() * k * k;
    let mean = 0.5 * (e_c + e_x);
    let half_split = 0.5 * ((e_c - e_x).powi(2) + 4.0 * params.rabi_half.powi(2)).sqrt();
    let lp0 = e_x - params.rabi_half;
    (mean - half_split - lp0, mean + half_split - lp0)
}

/// Frame detunings (Δ_C, Δ_X) placing the k = 0 lower polariton at −Δ in the
/// pump frame, for resonant exciton and photon.
pub fn frame_detunings(delta_lp: f64) -> (f64, f64) {
    let d = delta_lp - RABI_COUPLING;
    (d, d)
}

/// Lower-branch eigenvalue of the lossless linear operator
/// `[[−Δ_C + k², −2], [−2, −Δ_X]]` in the pump frame.
pub fn lp_frame_eigenvalue(delta_c: f64, delta_x: f64, k: f64) -> f64 {
    let a = -delta_c + k * k;
    let b = -delta_x;
    0.5 * (a + b) - (0.25 * (a - b).powi(2) + RABI_COUPLING * RABI_COUPLING).sqrt()
}

/// Wavevector at which the lower branch is resonant with the pump.
pub fn resonant_wavevector(delta_lp: f64) -> Result<f64, UnitsError> {
    if !(0.0..RABI_COUPLING).contains(&delta_lp) {
        return Err(UnitsError::NoResonance(delta_lp));
    }
    let d = delta_lp - RABI_COUPLING;
    let k2 = (d * d - RABI_COUPLING * RABI_COUPLING) / d;
    Ok(k2.max(0.0).sqrt())
}
