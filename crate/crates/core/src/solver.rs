//! Strang split-step integrator for the coupled photon–exciton equations.
//!
//! Each step applies half of the linear evolution exactly in momentum space
//! (one 2×2 matrix exponential per mode), a full real-space step carrying the
//! exciton nonlinearity, disorder, edge losses and the pump source, and the
//! second linear half. Consecutive linear halves are fused inside
//! [`Solver::advance`].

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drive::{Drive, DriveError};
use crate::grid::{Fft2, FieldPair, Grid2D, GridError};
use crate::units::{ModelParams, UnitsError, RABI_COUPLING};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-finite field at t = {t}")]
    BlowUp { t: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("snapshot sink failed at t = {t}: {source}")]
    Sink {
        t: f64,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Drive(#[from] DriveError),
    #[error(transparent)]
    Units(#[from] UnitsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dealias {
    /// Circular 2/3-rule mask on the nonlinear increment of the exciton field.
    #[serde(rename = "mask-2/3")]
    Mask23,
    /// Exciton nonlinearity evaluated on a twice-finer grid and truncated.
    #[serde(rename = "zero-pad-2x")]
    ZeroPad2x,
    #[serde(rename = "off")]
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Points per side.
    pub n: usize,
    /// Box side length.
    pub length: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Width of the absorbing edge band; 0 disables it.
    pub absorber_margin: f64,
    pub absorber_gamma_max: f64,
    pub dealias: Dealias,
    /// Time between emitted snapshots; must be a multiple of `dt`.
    pub snapshot_every: f64,
    /// Multiplies the exciton self-interaction; 0 makes the equations linear.
    pub interaction_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 256,
            length: 128.0,
            dt: 0.02,
            t_end: 800.0,
            absorber_margin: 16.0,
            absorber_gamma_max: 0.5,
            dealias: Dealias::Mask23,
            snapshot_every: 2.0,
            interaction_scale: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn grid(&self) -> Result<Grid2D, GridError> {
        Grid2D::new(self.n, self.length)
    }

    pub fn total_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn snapshot_stride(&self) -> usize {
        ((self.snapshot_every / self.dt).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let grid = self.grid()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SolverError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(SolverError::Config(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if !is_multiple(self.t_end, self.dt) {
            return Err(SolverError::Config(format!("t_end {} is not a multiple of dt {}", self.t_end, self.dt)));
        }
        if !(self.snapshot_every > 0.0 && is_multiple(self.snapshot_every, self.dt)) {
            return Err(SolverError::Config(format!(
                "snapshot_every {} must be a positive multiple of dt {}",
                self.snapshot_every, self.dt
            )));
        }
        if self.absorber_margin >= grid.length / 4.0 {
            return Err(SolverError::Config(format!(
                "absorber margin {} must be below L/4 = {}",
                self.absorber_margin,
                grid.length / 4.0
            )));
        }
        if self.absorber_margin < 0.0 || self.absorber_gamma_max < 0.0 {
            return Err(SolverError::Config("absorber parameters must be non-negative".into()));
        }
        if !self.interaction_scale.is_finite() {
            return Err(SolverError::Config("interaction_scale must be finite".into()));
        }
        Ok(())
    }
}

fn is_multiple(a: f64, b: f64) -> bool {
    let r = a / b;
    (r - r.round()).abs() < 1e-6
}

/// Linear operator `M(k)` of one Fourier mode acting on `(ψ_C, ψ_X)`.
pub fn mode_matrix(params: &ModelParams, k2: f64) -> [[Complex64; 2]; 2] {
    [
        [
            Complex64::new(-params.delta_c + k2, -0.5 * params.gamma_c),
            Complex64::new(-RABI_COUPLING, 0.0),
        ],
        [
            Complex64::new(-RABI_COUPLING, 0.0),
            Complex64::new(-params.delta_x, -0.5 * params.gamma_x),
        ],
    ]
}

/// `exp(−i M τ)` for a 2×2 matrix, from `M = m·1 + N` with `N² = s²·1`.
pub fn expm_minus_i(m: [[Complex64; 2]; 2], tau: f64) -> [[Complex64; 2]; 2] {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let d = 0.5 * (m[0][0] - m[1][1]);
    let s2 = d * d + m[0][1] * m[1][0];
    let s = s2.sqrt();
    let z = s * tau;
    let cos = z.cos();
    // sin(sτ)/s, with its series near s = 0
    let sinc = if z.norm() < 1e-6 {
        tau * (1.0 - z * z / 6.0)
    } else {
        z.sin() / s
    };
    let phase = (-I * mean * tau).exp();
    let a = -I * sinc;
    [
        [phase * (cos + a * d), phase * a * m[0][1]],
        [phase * a * m[1][0], phase * (cos - a * d)],
    ]
}

/// Eigenvalues `(lower, upper)` of a mode matrix, ordered by real part.
pub fn mode_eigenvalues(m: [[Complex64; 2]; 2]) -> (Complex64, Complex64) {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let d = 0.5 * (m[0][0] - m[1][1]);
    let s = (d * d + m[0][1] * m[1][0]).sqrt();
    let (a, b) = (mean - s, mean + s);
    if a.re <= b.re {
        (a, b)
    } else {
        (b, a)
    }
}

/// Per-mode propagators `exp(−i M(k) dt)` on a grid, stored flat in FFT order.
#[derive(Debug, Clone)]
pub struct PrecomputedPropagator {
    pub dt: f64,
    pub n: usize,
    mats: Vec<[Complex64; 4]>,
}

impl PrecomputedPropagator {
    pub fn new(grid: &Grid2D, params: &ModelParams, dt: f64) -> Self {
        let k = grid.k_axis();
        let mut mats = Vec::with_capacity(grid.cells());
        for ky in &k {
            for kx in &k {
                let u = expm_minus_i(mode_matrix(params, kx * kx + ky * ky), dt);
                mats.push([u[0][0], u[0][1], u[1][0], u[1][1]]);
            }
        }
        Self { dt, n: grid.n, mats }
    }

    /// Matrix of mode `(iy, ix)` in FFT order.
    pub fn matrix(&self, iy: usize, ix: usize) -> [[Complex64; 2]; 2] {
        let m = self.mats[iy * self.n + ix];
        [[m[0], m[1]], [m[2], m[3]]]
    }

    /// Folds a per-mode real weight (mask, normalisation) into the matrices.
    fn weighted(&self, weight: impl Fn(usize) -> f64) -> Vec<[Complex64; 4]> {
        self.mats
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let w = weight(i);
                [m[0] * w, m[1] * w, m[2] * w, m[3] * w]
            })
            .collect()
    }
}

/// Edge-loss profile: zero inside, raised-cosine rise to `gamma_max` across a
/// band of width `margin` at every edge.
pub fn build_absorber(grid: &Grid2D, margin: f64, gamma_max: f64) -> Result<Array2<f64>, SolverError> {
    let n = grid.n;
    if margin == 0.0 || gamma_max == 0.0 {
        return Ok(Array2::zeros((n, n)));
    }
    if margin >= grid.length / 4.0 {
        return Err(SolverError::Config(format!("absorber margin {margin} too large for L = {}", grid.length)));
    }
    if margin < 4.0 * grid.dx() {
        return Err(SolverError::Config(format!("absorber margin {margin} is narrower than 4 pixels")));
    }
    let half = 0.5 * grid.length;
    let profile: Vec<f64> = grid
        .coords()
        .iter()
        .map(|x| {
            let dist = half - x.abs();
            let s = ((margin - dist) / margin).clamp(0.0, 1.0);
            0.5 * (1.0 - (std::f64::consts::PI * s).cos())
        })
        .collect();
    Ok(Array2::from_shape_fn((n, n), |(iy, ix)| gamma_max * profile[iy].max(profile[ix])))
}

/// 2/3-rule circular mask in FFT order.
fn dealias_mask(grid: &Grid2D) -> Vec<bool> {
    let k = grid.k_axis();
    let cut = 2.0 / 3.0 * grid.k_max();
    let mut mask = Vec::with_capacity(grid.cells());
    for ky in &k {
        for kx in &k {
            mask.push(kx * kx + ky * ky <= cut * cut);
        }
    }
    mask
}

/// Receives immutable snapshots during a run.
pub trait SnapshotSink {
    fn accept(&mut self, fields: &FieldPair) -> Result<(), Box<dyn std::error::Error + Send + Sync>>;
}

impl<F> SnapshotSink for F
where
    F: FnMut(&FieldPair) -> Result<(), Box<dyn std::error::Error + Send + Sync>>,
{
    fn accept(&mut self, fields: &FieldPair) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        self(fields)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub snapshots: usize,
    pub t_final: f64,
    pub wall_time_s: f64,
    pub blow_up: bool,
    pub blow_up_time: Option<f64>,
}

struct PadStage {
    fft: Fft2,
    buf: Vec<Complex64>,
    work: Vec<Complex64>,
}

pub struct Solver {
    grid: Grid2D,
    config: SolverConfig,
    fft: Fft2,
    half: Vec<[Complex64; 4]>,
    full: Vec<[Complex64; 4]>,
    /// √(γ_C/2)·F(r)
    source: Vec<Complex64>,
    /// exp(−i(W − iΓ) dt/2)
    potential_half: Vec<Complex64>,
    nonlinear_dt: f64,
    ramp_tau: f64,
    gamma_c: f64,
    pad: Option<PadStage>,
    mask: Option<MaskStage>,
}

/// Exciton spectrum handed to the last real-space substep, kept so that modes
/// outside the 2/3 band can be restored: only the nonlinear increment is
/// projected onto the band, linear dynamics keep every mode.
struct MaskStage {
    outside: Vec<usize>,
    spectrum: Vec<Complex64>,
}

impl Solver {
    pub fn new(params: &ModelParams, drive: &Drive, config: &SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        params.validate()?;
        let grid = config.grid()?;
        grid.check_shape(&drive.pump)?;
        grid.check_shape(&drive.disorder)?;
        let absorber = build_absorber(&grid, config.absorber_margin, config.absorber_gamma_max)?;

        let cells = grid.cells();
        let norm = 1.0 / cells as f64;
        let mask = match config.dealias {
            Dealias::Mask23 => Some(dealias_mask(&grid)),
            _ => None,
        };
        let weight = |_: usize| norm;
        let half = PrecomputedPropagator::new(&grid, params, 0.5 * config.dt).weighted(weight);
        let full = PrecomputedPropagator::new(&grid, params, config.dt).weighted(weight);
        // the mask is symmetric in (kx, ky), so it also indexes the transposed spectra
        let mask = mask.map(|m| MaskStage {
            outside: m.iter().enumerate().filter(|(_, &keep)| !keep).map(|(i, _)| i).collect(),
            spectrum: vec![ZERO; cells],
        });

        let coupling = (0.5 * params.gamma_c).sqrt();
        let source = drive.pump.iter().map(|f| f * coupling).collect();
        let h = 0.5 * config.dt;
        let potential_half = drive
            .disorder
            .iter()
            .zip(absorber.iter())
            .map(|(&w, &g)| (-I * Complex64::new(w, -g) * h).exp())
            .collect();

        let pad = match config.dealias {
            Dealias::ZeroPad2x => {
                let m = 2 * grid.n;
                Some(PadStage {
                    fft: Fft2::new(m),
                    buf: vec![ZERO; m * m],
                    work: vec![ZERO; cells],
                })
            }
            _ => None,
        };

        Ok(Self {
            grid,
            config: config.clone(),
            fft: Fft2::new(grid.n),
            half,
            full,
            source,
            potential_half,
            nonlinear_dt: config.dt * config.interaction_scale,
            ramp_tau: drive.ramp_tau,
            gamma_c: params.gamma_c,
            pad,
            mask,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn gamma_c(&self) -> f64 {
        self.gamma_c
    }

    /// One Strang step `L(dt/2) · R(dt) · L(dt/2)`.
    pub fn step(&mut self, fields: &mut FieldPair) -> Result<(), SolverError> {
        self.advance(fields, 1)
    }

    /// `steps` Strang steps with the inner linear halves fused.
    pub fn advance(&mut self, fields: &mut FieldPair, steps: usize) -> Result<(), SolverError> {
        if steps == 0 {
            return Ok(());
        }
        self.check_fields(fields)?;
        let t0 = fields.t;
        let dt = self.config.dt;
        let n = self.grid.n;
        let (psi_c, psi_x) = (
            fields.psi_c.as_slice_mut().expect("standard layout"),
            fields.psi_x.as_slice_mut().expect("standard layout"),
        );
        self.linear(psi_c, psi_x, true, false);
        for i in 0..steps {
            let t = t0 + i as f64 * dt;
            self.real_space(psi_c, psi_x, t).map_err(|_| SolverError::BlowUp { t: t + dt })?;
            self.linear(psi_c, psi_x, i + 1 == steps, true);
        }
        fields.t = t0 + steps as f64 * dt;
        if !all_finite(psi_c) || !all_finite(psi_x) {
            return Err(SolverError::BlowUp { t: fields.t });
        }
        debug_assert_eq!(psi_c.len(), n * n);
        Ok(())
    }

    fn check_fields(&self, fields: &mut FieldPair) -> Result<(), SolverError> {
        self.grid.check_shape(&fields.psi_c)?;
        self.grid.check_shape(&fields.psi_x)?;
        if !fields.psi_c.is_standard_layout() {
            fields.psi_c = fields.psi_c.as_standard_layout().into_owned();
        }
        if !fields.psi_x.is_standard_layout() {
            fields.psi_x = fields.psi_x.as_standard_layout().into_owned();
        }
        Ok(())
    }

    fn linear(&mut self, psi_c: &mut [Complex64], psi_x: &mut [Complex64], half: bool, after_nonlinear: bool) {
        self.fft.forward_transposed_raw(psi_c);
        self.fft.forward_transposed_raw(psi_x);
        if let Some(m) = self.mask.as_ref().filter(|_| after_nonlinear) {
            let scale = psi_x.len() as f64;
            for &i in &m.outside {
                psi_x[i] = m.spectrum[i] * scale;
            }
        }
        let mats = if half { &self.half } else { &self.full };
        // the transposed spectrum layout is harmless: M depends on |k|² only
        for ((c, x), m) in psi_c.iter_mut().zip(psi_x.iter_mut()).zip(mats) {
            let (a, b) = (*c, *x);
            *c = m[0] * a + m[1] * b;
            *x = m[2] * a + m[3] * b;
        }
        if let Some(m) = self.mask.as_mut() {
            m.spectrum.copy_from_slice(psi_x);
        }
        self.fft.inverse_from_transposed_raw(psi_c);
        self.fft.inverse_from_transposed_raw(psi_x);
    }

    /// Real-space substep over `[t, t + dt]`. Errors when a value is non-finite.
    fn real_space(&mut self, psi_c: &mut [Complex64], psi_x: &mut [Complex64], t: f64) -> Result<(), ()> {
        let dt = self.config.dt;
        let pump = crate::drive::ramp(t + 0.5 * dt, self.ramp_tau) * dt;
        let mut acc = 0.0;
        if let Some(pad) = self.pad.as_mut() {
            padded_nonlinearity(&mut self.fft, pad, self.grid.n, psi_x, self.nonlinear_dt);
            acc += psi_x.iter().map(|z| z.norm_sqr()).sum::<f64>();
        } else {
            let g = self.nonlinear_dt;
            for x in psi_x.iter_mut() {
                let n2 = x.norm_sqr();
                let (s, c) = (-n2 * g).sin_cos();
                *x *= Complex64::new(c, s);
                acc += n2;
            }
        }
        for ((c, h), f) in psi_c.iter_mut().zip(&self.potential_half).zip(&self.source) {
            let v = (*c * h + f * pump) * h;
            acc += v.norm_sqr();
            *c = v;
        }
        if acc.is_finite() {
            Ok(())
        } else {
            Err(())
        }
    }

    /// Integrates from `initial` to `t_end`, handing a snapshot to every sink
    /// at the start and then every `snapshot_every`.
    pub fn run(
        &mut self,
        initial: FieldPair,
        sinks: &mut [&mut dyn SnapshotSink],
    ) -> Result<(FieldPair, RunSummary), SolverError> {
        let started = Instant::now();
        let mut fields = initial;
        let total = self.config.total_steps();
        let stride = self.config.snapshot_stride();
        let mut snapshots = 0;
        emit(&fields, sinks)?;
        snapshots += 1;
        let mut done = 0;
        while done < total {
            let chunk = stride.min(total - done);
            self.advance(&mut fields, chunk)?;
            done += chunk;
            if done % stride == 0 {
                emit(&fields, sinks)?;
                snapshots += 1;
            }
        }
        let summary = RunSummary {
            steps: done,
            snapshots,
            t_final: fields.t,
            wall_time_s: started.elapsed().as_secs_f64(),
            blow_up: false,
            blow_up_time: None,
        };
        Ok((fields, summary))
    }
}

fn emit(fields: &FieldPair, sinks: &mut [&mut dyn SnapshotSink]) -> Result<(), SolverError> {
    for sink in sinks.iter_mut() {
        sink.accept(fields).map_err(|source| SolverError::Sink { t: fields.t, source })?;
    }
    Ok(())
}

fn all_finite(v: &[Complex64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Applies `ψ_X ← ψ_X exp(−i|ψ_X|² dt)` on a 2× zero-padded grid, truncating
/// the result back to the original band. The Nyquist rows are dropped.
fn padded_nonlinearity(fft: &mut Fft2, pad: &mut PadStage, n: usize, psi_x: &mut [Complex64], g_dt: f64) {
    let m = 2 * n;
    let half = n / 2;
    // padded positions of a small-grid index; the Nyquist coefficient is split
    // evenly between ±n/2 so that the round trip is the identity
    let spread = |i: usize| -> &'static [(usize, f64)] {
        match i {
            _ if i == half => &[(0, 0.5), (1, 0.5)],
            _ => &[(0, 1.0)],
        }
    };
    let place = |i: usize, which: usize| match (i < half, i == half && which == 0) {
        (true, _) | (_, true) => i,
        _ => i + n,
    };

    pad.work.copy_from_slice(psi_x);
    fft.forward_transposed_raw(&mut pad.work);
    pad.buf.iter_mut().for_each(|z| *z = ZERO);
    let scale = 1.0 / (n * n) as f64;
    for a in 0..n {
        for b in 0..n {
            let v = pad.work[a * n + b] * scale;
            for &(ja, wa) in spread(a) {
                for &(jb, wb) in spread(b) {
                    pad.buf[place(a, ja) * m + place(b, jb)] = v * (wa * wb);
                }
            }
        }
    }
    pad.fft.inverse_from_transposed_raw(&mut pad.buf);
    for z in pad.buf.iter_mut() {
        let (s, c) = (-z.norm_sqr() * g_dt).sin_cos();
        *z *= Complex64::new(c, s);
    }
    pad.fft.forward_transposed_raw(&mut pad.buf);
    let scale = 1.0 / (m * m) as f64;
    for a in 0..n {
        for b in 0..n {
            let mut v = ZERO;
            for &(ja, _) in spread(a) {
                for &(jb, _) in spread(b) {
                    v += pad.buf[place(a, ja) * m + place(b, jb)];
                }
            }
            pad.work[a * n + b] = v * scale;
        }
    }
    fft.inverse_from_transposed_raw(&mut pad.work);
    psi_x.copy_from_slice(&pad.work);
}
