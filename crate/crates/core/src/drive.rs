//! Counter-propagating cut-Gaussian pump, its switch-on ramp, and the
//! Gaussian-correlated photonic disorder potential.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Fft2, Grid2D, GridError};

#[derive(Debug, Error, PartialEq)]
pub enum DriveError {
    #[error("invalid pump: {0}")]
    Pump(String),
    #[error("invalid disorder: {0}")]
    Disorder(String),
    #[error("cannot transfer disorder from {from:?} to {to:?}")]
    Transfer { from: Grid2D, to: Grid2D },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpSpec {
    pub f_inc: f64,
    /// Pump wavevector along x; the left lobe carries `+k_p`, the right `−k_p`.
    pub k_p: f64,
    /// Transverse pump wavevector component. Accepted but not exercised.
    pub k_p_y: f64,
    /// Each lobe profile is centred at `∓d`.
    pub d: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_c: f64,
    pub ramp_tau: f64,
    /// Global pump phase.
    pub phase: f64,
}

impl Default for PumpSpec {
    fn default() -> Self {
        Self {
            f_inc: 1.2,
            k_p: 0.4,
            k_p_y: 0.0,
            d: 7.5,
            sigma_x: 25.0,
            sigma_y: 20.0,
            sigma_c: 40.0,
            ramp_tau: 70.0,
            phase: 0.0,
        }
    }
}

impl PumpSpec {
    pub fn validate(&self) -> Result<(), DriveError> {
        for (name, v) in [
            ("d", self.d),
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_c", self.sigma_c),
            ("ramp_tau", self.ramp_tau),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DriveError::Pump(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.f_inc.is_finite() && self.f_inc >= 0.0) {
            return Err(DriveError::Pump(format!("f_inc must be >= 0, got {}", self.f_inc)));
        }
        Ok(())
    }

    /// Single-lobe cut profile `P(x, y)`: a Gaussian minus a cubic-exponent cut.
    pub fn lobe(&self, x: f64, y: f64) -> f64 {
        let gy = y * y / (2.0 * self.sigma_y * self.sigma_y);
        (-x * x / (2.0 * self.sigma_x * self.sigma_x) - gy).exp()
            - (-x.abs().powi(3) / (2.0 * self.sigma_c.powi(3)) - gy).exp()
    }

    /// Complex pump amplitude at `(x, y)`.
    pub fn amplitude(&self, x: f64, y: f64) -> Complex64 {
        let phase = self.k_p * x + self.k_p_y * y;
        let left = self.lobe(x + self.d, y) * Complex64::from_polar(1.0, phase + self.phase);
        let right = self.lobe(x - self.d, y) * Complex64::from_polar(1.0, -phase + self.phase);
        self.f_inc * (left + right)
    }
}

pub fn pump_profile(spec: &PumpSpec, grid: &Grid2D) -> Array2<Complex64> {
    let xs = grid.coords();
    Array2::from_shape_fn((grid.n, grid.n), |(iy, ix)| spec.amplitude(xs[ix], xs[iy]))
}

/// Positions of the two maxima of `|P(x+d, 0) + P(x−d, 0)|` found on a fine
/// scan of `[-span, span]`, as `(left, right)`.
pub fn envelope_peaks(spec: &PumpSpec, span: f64) -> (f64, f64) {
    let steps = 200_000;
    let h = span / steps as f64;
    let env = |x: f64| (spec.lobe(x + spec.d, 0.0) + spec.lobe(x - spec.d, 0.0)).abs();
    let right = (0..=steps)
        .map(|i| i as f64 * h)
        .fold((0.0, f64::MIN), |best, x| {
            let v = env(x);
            if v > best.1 {
                (x, v)
            } else {
                best
            }
        })
        .0;
    (-right, right)
}

/// Switch-on ramp `1 − exp(−t/τ)`.
pub fn ramp(t: f64, tau: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        -(-t / tau).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisorderSpec {
    /// Target rms amplitude.
    pub w0: f64,
    /// Correlation length in `exp(−r²/4σ_W²)`.
    pub sigma_w: f64,
    pub seed: u64,
}

impl Default for DisorderSpec {
    fn default() -> Self {
        Self {
            w0: 1.43e-3,
            sigma_w: 0.36,
            seed: 1,
        }
    }
}

impl DisorderSpec {
    pub fn validate(&self) -> Result<(), DriveError> {
        if !(self.w0.is_finite() && self.w0 >= 0.0) {
            return Err(DriveError::Disorder(format!("w0 must be >= 0, got {}", self.w0)));
        }
        if !(self.sigma_w.is_finite() && self.sigma_w > 0.0) {
            return Err(DriveError::Disorder(format!("sigma_w must be > 0, got {}", self.sigma_w)));
        }
        Ok(())
    }

    /// True when the correlation length is below one grid spacing.
    pub fn under_resolved(&self, grid: &Grid2D) -> bool {
        self.sigma_w < grid.dx()
    }
}

/// Zero-mean Gaussian random field with covariance `W0² exp(−|r|²/4σ_W²)`,
/// normalised to sample rms exactly `w0`.
///
/// Complex white noise is shaped by the square root of the Gaussian power
/// spectrum `∝ exp(−σ_W² k²)`, transformed back, and its real part kept.
pub fn sample_disorder(spec: &DisorderSpec, grid: &Grid2D) -> Result<Array2<f64>, DriveError> {
    spec.validate()?;
    let n = grid.n;
    if spec.w0 == 0.0 {
        return Ok(Array2::zeros((n, n)));
    }
    if spec.under_resolved(grid) {
        log::warn!(
            "disorder correlation length {} is below the grid spacing {}; correlations are degraded",
            spec.sigma_w,
            grid.dx()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kx = grid.k_axis();
    let s2 = spec.sigma_w * spec.sigma_w;
    let mut spectrum = Array2::from_shape_fn((n, n), |(iy, ix)| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let k2 = kx[ix] * kx[ix] + kx[iy] * kx[iy];
        Complex64::new(re, im) * (-0.5 * s2 * k2).exp()
    });
    spectrum[[0, 0]] = Complex64::new(0.0, 0.0);
    Fft2::new(n).inverse(&mut spectrum);
    let mut field = spectrum.mapv(|z| z.re);
    let mean = field.mean().unwrap_or(0.0);
    field -= mean;
    let rms = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
    if rms > 0.0 {
        field *= spec.w0 / rms;
    }
    Ok(field)
}

/// Carries a disorder realisation onto a refined grid: spectral interpolation
/// when only the resolution changes, periodic tiling about the origin when
/// only the box grows. Used to hold the sample fixed in convergence studies.
pub fn transfer_disorder(field: &Array2<f64>, from: &Grid2D, to: &Grid2D) -> Result<Array2<f64>, DriveError> {
    from.check_shape(field)?;
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let (n, m) = (from.n, to.n);
    if same(from.length, to.length) && m >= n {
        let mut coarse = field.mapv(|v| Complex64::new(v, 0.0));
        Fft2::new(n).forward(&mut coarse);
        let gain = m as f64 / n as f64;
        let half = n as isize / 2;
        let wrap = |i: isize| i.rem_euclid(m as isize) as usize;
        let mut fine = Array2::<Complex64>::zeros((m, m));
        for ((iy, ix), c) in coarse.indexed_iter() {
            let sy = signed(iy, n);
            let sx = signed(ix, n);
            let targets_y: Vec<(isize, f64)> = if sy == half && m > n {
                vec![(half, 0.5), (-half, 0.5)]
            } else {
                vec![(sy, 1.0)]
            };
            let targets_x: Vec<(isize, f64)> = if sx == half && m > n {
                vec![(half, 0.5), (-half, 0.5)]
            } else {
                vec![(sx, 1.0)]
            };
            for &(ty, wy) in &targets_y {
                for &(tx, wx) in &targets_x {
                    fine[[wrap(ty), wrap(tx)]] += c * (gain * wy * wx);
                }
            }
        }
        Fft2::new(m).inverse(&mut fine);
        return Ok(fine.mapv(|z| z.re));
    }
    if same(from.dx(), to.dx()) && m >= n {
        let shift = (n / 2) as isize - (m / 2) as isize;
        return Ok(Array2::from_shape_fn((m, m), |(iy, ix)| {
            let sy = (iy as isize + shift).rem_euclid(n as isize) as usize;
            let sx = (ix as isize + shift).rem_euclid(n as isize) as usize;
            field[[sy, sx]]
        }));
    }
    Err(DriveError::Transfer { from: *from, to: *to })
}

fn signed(i: usize, n: usize) -> isize {
    if i <= n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Everything the solver needs from the drive side, materialised on a grid.
#[derive(Debug, Clone)]
pub struct Drive {
    pub pump: Array2<Complex64>,
    pub disorder: Array2<f64>,
    pub ramp_tau: f64,
}

impl Drive {
    pub fn new(pump: &PumpSpec, disorder: &DisorderSpec, grid: &Grid2D) -> Result<Self, DriveError> {
        pump.validate()?;
        Ok(Self {
            pump: pump_profile(pump, grid),
            disorder: sample_disorder(disorder, grid)?,
            ramp_tau: pump.ramp_tau,
        })
    }

    pub fn from_parts(
        pump: Array2<Complex64>,
        disorder: Array2<f64>,
        ramp_tau: f64,
        grid: &Grid2D,
    ) -> Result<Self, DriveError> {
        grid.check_shape(&pump)?;
        grid.check_shape(&disorder)?;
        if !(ramp_tau > 0.0) {
            return Err(DriveError::Pump(format!("ramp_tau must be positive, got {ramp_tau}")));
        }
        Ok(Self { pump, disorder, ramp_tau })
    }

    pub fn ramp(&self, t: f64) -> f64 {
        ramp(t, self.ramp_tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_relative_eq;

    #[test]
    fn zero_amplitude_pump_vanishes() {
        let g = make_grid(64, 128.0).unwrap();
        let spec = PumpSpec { f_inc: 0.0, ..Default::default() };
        assert!(pump_profile(&spec, &g).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn pump_centre_is_cut() {
        let spec = PumpSpec { d: 0.0, ..Default::default() };
        assert_eq!(spec.amplitude(0.0, 0.0).norm(), 0.0);
        assert_eq!(spec.lobe(0.0, 3.0), 0.0);
    }

    #[test]
    fn envelope_has_symmetric_maxima() {
        let spec = PumpSpec::default();
        let (l, r) = envelope_peaks(&spec, 100.0);
        assert_relative_eq!(l, -r);
        // frozen from the 1D scan of |P(x+d) + P(x−d)| with the default geometry
        assert!((r - 35.959).abs() < 0.01, "right peak at {r}");
        let env = |x: f64| (spec.lobe(x + spec.d, 0.0) + spec.lobe(x - spec.d, 0.0)).abs();
        assert!(env(r) > env(r - 1.0) && env(r) > env(r + 1.0));
    }

    #[test]
    fn lobe_phase_gradients() {
        let spec = PumpSpec::default();
        let g = make_grid(512, 256.0).unwrap();
        let dx = g.dx();
        // far right the −k_p beam dominates
        let a = spec.amplitude(60.0, 0.0);
        let b = spec.amplitude(60.0 + dx, 0.0);
        let right_lobe_only = |x: f64| spec.lobe(x - spec.d, 0.0);
        let left_lobe_only = |x: f64| spec.lobe(x + spec.d, 0.0);
        assert!(right_lobe_only(60.0).abs() > 2.0 * left_lobe_only(60.0).abs());
        let single = |x: f64| Complex64::from_polar(right_lobe_only(x), -spec.k_p * x);
        let dphi = (single(30.0 + dx) / single(30.0)).arg();
        assert_relative_eq!(dphi, -spec.k_p * dx, epsilon = 1e-12);
        assert!(a.norm() > 0.0 && b.norm() > 0.0);
    }

    #[test]
    fn pump_parity() {
        let g = make_grid(128, 128.0).unwrap();
        let spec = PumpSpec::default();
        let p = pump_profile(&spec, &g);
        let n = g.n;
        for iy in 0..n {
            for ix in 1..n {
                let mirror = p[[iy, n - ix]];
                assert!((p[[iy, ix]] - mirror).norm() < 1e-12);
                let e1 = spec.lobe(g.x(ix) + spec.d, g.x(iy)) + spec.lobe(g.x(ix) - spec.d, g.x(iy));
                let e2 = spec.lobe(-g.x(ix) + spec.d, g.x(iy)) + spec.lobe(-g.x(ix) - spec.d, g.x(iy));
                assert!((e1 - e2).abs() < 1e-12);
            }
        }
        // mirrored lobes carry opposite momenta
        let left = spec.lobe(-20.0 + spec.d, 0.0) * Complex64::from_polar(1.0, spec.k_p * -20.0);
        let right_conj = spec.lobe(20.0 - spec.d, 0.0) * Complex64::from_polar(1.0, -spec.k_p * 20.0);
        assert!((left - right_conj).norm() < 1e-12);
    }

    #[test]
    fn ramp_values() {
        assert_eq!(ramp(0.0, 70.0), 0.0);
        assert_relative_eq!(ramp(210.0, 70.0), 0.9502, epsilon = 1e-4);
        assert_relative_eq!(ramp(70.0, 70.0), 0.6321, epsilon = 1e-4);
        let h = 1e-6;
        assert_relative_eq!(ramp(h, 70.0) / h, 1.0 / 70.0, max_relative = 1e-5);
        let mut last = 0.0;
        for i in 1..2000 {
            let v = ramp(i as f64, 70.0);
            assert!(v > last && v < 1.0 || v == 1.0 && i > 1000);
            last = v;
        }
    }

    #[test]
    fn zero_disorder_is_zero() {
        let g = make_grid(32, 16.0).unwrap();
        let spec = DisorderSpec { w0: 0.0, ..Default::default() };
        assert!(sample_disorder(&spec, &g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disorder_rms_and_mean() {
        let g = make_grid(512, 256.0).unwrap();
        let spec = DisorderSpec::default();
        let w = sample_disorder(&spec, &g).unwrap();
        let mean = w.mean().unwrap();
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!(mean.abs() < 1e-15);
        assert!((std / 1.43e-3 - 1.0).abs() < 0.03);
        assert!(spec.under_resolved(&g));
    }

    #[test]
    fn disorder_is_deterministic_per_seed() {
        let g = make_grid(64, 32.0).unwrap();
        let a = sample_disorder(&DisorderSpec::default(), &g).unwrap();
        let b = sample_disorder(&DisorderSpec::default(), &g).unwrap();
        let c = sample_disorder(&DisorderSpec { seed: 2, ..Default::default() }, &g).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    /// Shifted-window correlation estimate at a one-pixel lag.
    fn lag_one_correlation(w: &Array2<f64>, rows: std::ops::Range<usize>) -> f64 {
        let n = w.ncols();
        let (mut num, mut den) = (0.0, 0.0);
        for iy in rows {
            for ix in 0..n - 1 {
                num += w[[iy, ix]] * w[[iy, ix + 1]];
                den += w[[iy, ix]] * w[[iy, ix]];
            }
        }
        num / den
    }

    #[test]
    fn disorder_is_stationary() {
        let g = make_grid(256, 128.0).unwrap();
        let w = sample_disorder(&DisorderSpec { sigma_w: 1.0, ..Default::default() }, &g).unwrap();
        let top = lag_one_correlation(&w, 0..128);
        let bottom = lag_one_correlation(&w, 128..256);
        let expected = (-0.25f64 / 4.0).exp();
        assert!((top - expected).abs() < 0.02, "{top}");
        assert!((bottom - expected).abs() < 0.02, "{bottom}");
    }

    #[test]
    fn transfer_preserves_samples() {
        let coarse = make_grid(32, 16.0).unwrap();
        let w = sample_disorder(&DisorderSpec { sigma_w: 1.0, ..Default::default() }, &coarse).unwrap();
        let fine = make_grid(64, 16.0).unwrap();
        let wf = transfer_disorder(&w, &coarse, &fine).unwrap();
        for iy in 0..32 {
            for ix in 0..32 {
                assert!((wf[[2 * iy, 2 * ix]] - w[[iy, ix]]).abs() < 1e-12);
            }
        }
        let big = make_grid(64, 32.0).unwrap();
        let wb = transfer_disorder(&w, &coarse, &big).unwrap();
        assert_eq!(wb[[32, 32]], w[[16, 16]]);
        assert_eq!(wb[[16, 16]], w[[0, 0]]);
        assert!(transfer_disorder(&w, &coarse, &make_grid(64, 20.0).unwrap()).is_err());
    }
}
