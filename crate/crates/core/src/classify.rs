//! Regime labels and energy-ratio cross-probabilities.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observables::{density_spectrum, eta_time_average, CoherenceResult, ObservableRecord, ObservablesError, SPECTRUM_PAD};
use crate::units::{resonant_wavevector, ModelParams};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("records span {span} but at least {need} is required")]
    InsufficientRecords { span: f64, need: f64 },
    #[error("unknown regime `{0}`")]
    UnknownRegime(String),
    #[error(transparent)]
    Observables(#[from] ObservablesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Linear,
    Solitonic,
    Turbulent,
    Superfluid,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Linear, Regime::Solitonic, Regime::Turbulent, Regime::Superfluid];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Linear => "linear",
            Regime::Solitonic => "solitonic",
            Regime::Turbulent => "turbulent",
            Regime::Superfluid => "superfluid",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = ClassifyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| ClassifyError::UnknownRegime(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Runs with g1 below this are turbulent.
    pub theta_turb: f64,
    /// Maximal |k_field − k_res| for the linear label.
    pub linear_k_tol: f64,
    pub linear_contrast: f64,
    /// Maximal k_field for the superfluid label.
    pub superfluid_k: f64,
    pub flat_rel_std: f64,
    /// Required record span.
    pub min_span: f64,
    /// Trailing window for η and the vortex count.
    pub eta_window: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            theta_turb: 0.95,
            linear_k_tol: 0.1,
            linear_contrast: 0.5,
            superfluid_k: 0.15,
            flat_rel_std: 0.15,
            min_span: 500.0,
            eta_window: 500.0,
        }
    }
}

/// Shape descriptors of the time-averaged ROI density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub k_peak: f64,
    pub k_field: f64,
    /// (max − min) / (max + min)
    pub contrast: f64,
    /// std / mean
    pub rel_std: f64,
}

pub fn summarize_density(mean_density: ArrayView2<f64>, dx: f64) -> DensitySummary {
    let spec = density_spectrum(mean_density, dx, SPECTRUM_PAD);
    let (lo, hi) = mean_density
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let contrast = if hi + lo > 0.0 { (hi - lo) / (hi + lo) } else { 0.0 };
    let n = mean_density.len().max(1) as f64;
    let mean = mean_density.sum() / n;
    let var = mean_density.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let rel_std = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    DensitySummary {
        k_peak: spec.k_peak,
        k_field: spec.k_field,
        contrast,
        rel_std,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub g1: f64,
    pub eta: f64,
    pub eta_std: f64,
    pub k_field: f64,
    pub k_resonant: f64,
    pub contrast: f64,
    pub rel_std: f64,
    /// Largest vortex count of a single snapshot in the trailing window.
    pub vortex_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub regime: Regime,
    pub evidence: Evidence,
    pub thresholds: Thresholds,
}

pub fn classify_run(
    coherence: &CoherenceResult,
    records: &[ObservableRecord],
    density: &DensitySummary,
    params: &ModelParams,
    thresholds: &Thresholds,
) -> Result<RegimeLabel, ClassifyError> {
    let span = match (records.first(), records.last()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0.0,
    };
    if span + 1e-9 < thresholds.min_span {
        return Err(ClassifyError::InsufficientRecords {
            span,
            need: thresholds.min_span,
        });
    }
    let (eta, eta_std) = eta_time_average(records, thresholds.eta_window)?;
    let last = records.last().map(|r| r.t).unwrap_or(0.0);
    let vortex_count = records
        .iter()
        .filter(|r| r.t > last - thresholds.eta_window)
        .map(|r| r.vortex_count)
        .max()
        .unwrap_or(0);
    let k_resonant = resonant_wavevector(params.delta_lp).unwrap_or(f64::NAN);
    let evidence = Evidence {
        g1: coherence.scalar,
        eta,
        eta_std,
        k_field: density.k_field,
        k_resonant,
        contrast: density.contrast,
        rel_std: density.rel_std,
        vortex_count,
    };
    Ok(RegimeLabel {
        regime: decide(&evidence, thresholds),
        evidence,
        thresholds: *thresholds,
    })
}

/// The decision tree on a populated evidence vector.
pub fn decide(e: &Evidence, t: &Thresholds) -> Regime {
    // NaN coherence (no valid pixel) is not evidence of stationarity
    if !(e.g1 >= t.theta_turb) {
        Regime::Turbulent
    } else if (e.k_field - e.k_resonant).abs() < t.linear_k_tol && e.contrast > t.linear_contrast {
        Regime::Linear
    } else if e.k_field < t.superfluid_k && e.rel_std < t.flat_rel_std {
        Regime::Superfluid
    } else {
        Regime::Solitonic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub reference: Regime,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    /// Runs of any regime whose η falls in `mean ± std`.
    pub in_interval: usize,
    /// P(target | η in the interval), indexed like `Regime::ALL`; `None`
    /// when the row is undefined.
    pub probabilities: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossProbabilityTable {
    pub rows: Vec<CrossRow>,
}

impl CrossProbabilityTable {
    pub fn row(&self, reference: Regime) -> &CrossRow {
        &self.rows[reference.index()]
    }

    pub fn probability(&self, reference: Regime, target: Regime) -> Option<f64> {
        self.row(reference).probabilities.map(|p| p[target.index()])
    }
}

/// Rows need at least two runs of the reference regime and a non-empty
/// interval; otherwise they are left undefined.
pub fn cross_probability(runs: &[(Regime, f64)]) -> CrossProbabilityTable {
    let rows = Regime::ALL
        .iter()
        .map(|&reference| {
            let own: Vec<f64> = runs.iter().filter(|(r, _)| *r == reference).map(|&(_, e)| e).collect();
            let n = own.len();
            let mean = if n > 0 { own.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 0 {
                (own.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
            } else {
                f64::NAN
            };
            let mut counts = [0usize; 4];
            if n >= 2 {
                for &(r, e) in runs {
                    if (e - mean).abs() <= std {
                        counts[r.index()] += 1;
                    }
                }
            }
            let in_interval: usize = counts.iter().sum();
            let probabilities = (n >= 2 && in_interval > 0).then(|| counts.map(|c| c as f64 / in_interval as f64));
            CrossRow {
                reference,
                runs: n,
                mean,
                std,
                in_interval,
                probabilities,
            }
        })
        .collect();
    CrossProbabilityTable { rows }
}
