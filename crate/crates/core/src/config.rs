//! Run configuration: TOML sections, presets and validation.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Thresholds;
use crate::drive::{DisorderSpec, DriveError, PumpSpec};
use crate::grid::Roi;
use crate::solver::{SolverConfig, SolverError};
use crate::units::{ModelParams, UnitsError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialise configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unknown preset `{0}` (expected desk or paper)")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Units(#[from] UnitsError),
    #[error(transparent)]
    Drive(#[from] DriveError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Independent model inputs; frame detunings and unit anchors are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// ħΩ in meV.
    pub rabi_half: f64,
    pub photon_mass_ratio: f64,
    /// ħ g_X in meV·µm².
    pub g_x: f64,
    pub gamma_c: f64,
    pub gamma_x: f64,
    /// Pump detuning above the k = 0 lower polariton, units of ħΩ/2.
    pub delta: f64,
    /// nm
    pub photon_wavelength: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            rabi_half: p.rabi_half,
            photon_mass_ratio: p.photon_mass_ratio,
            g_x: p.g_x,
            gamma_c: p.gamma_c,
            gamma_x: p.gamma_x,
            delta: p.delta_lp,
            photon_wavelength: p.photon_wavelength,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> ModelParams {
        let mut p = ModelParams::new(self.delta);
        p.rabi_half = self.rabi_half;
        p.photon_mass_ratio = self.photon_mass_ratio;
        p.g_x = self.g_x;
        p.gamma_c = self.gamma_c;
        p.gamma_x = self.gamma_x;
        p.photon_wavelength = self.photon_wavelength;
        p.refresh_anchors();
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub f_inc: Vec<f64>,
    pub delta: Vec<f64>,
    pub k_p: Vec<f64>,
    /// Derive a distinct disorder seed per cell instead of sharing one.
    pub per_cell_seeds: bool,
    pub workers: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            f_inc: vec![0.3, 0.6, 1.2, 2.4, 3.7],
            delta: vec![0.05, 0.14, 0.22, 0.30],
            k_p: vec![0.4],
            per_cell_seeds: false,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub roi: Roi,
    /// Trailing window for the coherence used in classification and sweeps.
    pub g1_window: f64,
    /// Longer coherence window reported alongside.
    pub g1_long_window: f64,
    pub eta_window: f64,
    pub vortex_floor: f64,
    pub thresholds: Thresholds,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            roi: Roi::default(),
            g1_window: 100.0,
            g1_long_window: 500.0,
            eta_window: 500.0,
            vortex_floor: crate::observables::DENSITY_FLOOR_REL,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 256², L = 128, t = 800: same resolution and physics, minutes per run.
    Desk,
    /// 512², L = 256, t = 2000: reference scale, hours per run.
    Paper,
}

impl FromStr for Preset {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub pump: PumpSpec,
    pub disorder: DisorderSpec,
    pub solver: SolverConfig,
    pub sweep: SweepSection,
    pub analysis: AnalysisSection,
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        let mut c = Config::default();
        c.apply_preset(preset);
        c
    }

    /// Overwrites grid size, box and duration with the preset values.
    pub fn apply_preset(&mut self, preset: Preset) {
        // the desk box cannot fit a wider edge band without cutting into the
        // pump lobes
        let (n, length, t_end, margin) = match preset {
            Preset::Desk => (256, 128.0, 800.0, 16.0),
            Preset::Paper => (512, 256.0, 2000.0, 32.0),
        };
        self.solver.n = n;
        self.solver.length = length;
        self.solver.t_end = t_end;
        self.solver.absorber_margin = margin;
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn params(&self) -> ModelParams {
        self.model.params()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params().validate()?;
        self.pump.validate()?;
        self.disorder.validate()?;
        self.solver.validate()?;
        let grid = self.solver.grid().map_err(SolverError::from)?;
        let window = self
            .analysis
            .roi
            .resolve(&grid)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        window
            .check_interior(&grid, self.solver.absorber_margin)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let a = &self.analysis;
        for (name, w) in [("g1_window", a.g1_window), ("g1_long_window", a.g1_long_window), ("eta_window", a.eta_window)] {
            if !(w > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.sweep.workers == 0 {
            return Err(ConfigError::Invalid("sweep.workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let d = Config::preset(Preset::Desk);
        assert_eq!((d.solver.n, d.solver.length, d.solver.t_end), (256, 128.0, 800.0));
        assert_eq!(d.solver.grid().unwrap().dx(), 0.5);
        let p = Config::preset(Preset::Paper);
        assert_eq!((p.solver.n, p.solver.length, p.solver.t_end), (512, 256.0, 2000.0));
        assert_eq!(p.solver.grid().unwrap().dx(), 0.5);
        d.validate().unwrap();
        p.validate().unwrap();
        assert!("laptop".parse::<Preset>().is_err());
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = Config::from_toml_str(
            r#"
            [model]
            delta = 0.3
            [pump]
            f_inc = 0.6
            [solver]
            t_end = 100.0
            dealias = "zero-pad-2x"
            [analysis.thresholds]
            theta_turb = 0.9
            "#,
        )
        .unwrap();
        let p = c.params();
        assert_eq!(p.delta_lp, 0.3);
        assert!((p.delta_c - (0.3 - 2.0)).abs() < 1e-15);
        assert_eq!(c.pump.f_inc, 0.6);
        assert_eq!(c.pump.k_p, 0.4);
        assert_eq!(c.solver.dealias, crate::solver::Dealias::ZeroPad2x);
        assert_eq!(c.analysis.thresholds.theta_turb, 0.9);
        assert_eq!(c.analysis.thresholds.flat_rel_std, 0.15);
    }

    #[test]
    fn toml_round_trip() {
        let c = Config::preset(Preset::Paper);
        let back = Config::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::from_toml_str("[pump]\nf_inc = 1\nbogus = 2\n"), Err(ConfigError::Parse(_))));
        assert!(Config::from_toml_str("[solver]\nn = 200\n").is_err());
        assert!(Config::from_toml_str("[solver]\ndt = 0.03\nt_end = 1.0\n").is_err());
        // ROI reaching into the absorber
        assert!(Config::from_toml_str("[analysis.roi]\ncenter_x = 0.0\ncenter_y = 0.0\nwidth = 120.0\nheight = 10.0\n").is_err());
    }
}
