//! Diagnostics evaluated on snapshots: densities and fractions, energies per
//! polariton, momentum spectra, temporal coherence, vortices and the
//! refinement error used in convergence studies.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Fft2, FieldPair, Grid2D, GridError, Roi, RoiWindow};

/// Density floor relative to the ROI-mean density.
pub const DENSITY_FLOOR_REL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ObservablesError {
    #[error("photon norm vanishes in the region of interest; kinetic energy undefined")]
    ZeroNorm,
    #[error("averaging window {window} exceeds the recorded span {span}")]
    WindowTooLong { window: f64, span: f64 },
    #[error("need at least {need} samples in the window, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples are not evenly spaced in time")]
    UnevenSamples,
    #[error("samples have inconsistent shapes")]
    ShapeMismatch,
    #[error("snapshot times differ: {candidate} vs {reference}")]
    TimeMismatch { candidate: f64, reference: f64 },
    #[error("grids cannot be co-registered: {0}")]
    NotCoRegistered(String),
    #[error("record at t = {0} has no energy ratio")]
    MissingRatio(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Local photonic and excitonic fractions. Pixels whose total density is
/// below the floor hold the 0.5/0.5 sentinel and are flagged in `vacuum`.
#[derive(Debug, Clone)]
pub struct Fractions {
    pub f_c: Array2<f64>,
    pub f_x: Array2<f64>,
    pub vacuum: Array2<bool>,
}

pub fn fractions(fields: &FieldPair, floor: f64) -> Fractions {
    fractions_of(fields.psi_c.view(), fields.psi_x.view(), floor)
}

pub fn fractions_of(psi_c: ArrayView2<Complex64>, psi_x: ArrayView2<Complex64>, floor: f64) -> Fractions {
    let dim = psi_c.dim();
    let mut f_c = Array2::zeros(dim);
    let mut f_x = Array2::zeros(dim);
    let mut vacuum = Array2::from_elem(dim, false);
    Zip::from(&mut f_c)
        .and(&mut f_x)
        .and(&mut vacuum)
        .and(psi_c)
        .and(psi_x)
        .for_each(|fc, fx, vac, c, x| {
            let (nc, nx) = (c.norm_sqr(), x.norm_sqr());
            let total = nc + nx;
            if total < floor || total == 0.0 {
                *fc = 0.5;
                *fx = 0.5;
                *vac = true;
            } else {
                *fc = nc / total;
                *fx = nx / total;
            }
        });
    Fractions { f_c, f_x, vacuum }
}

/// Density floor for a window: a fixed fraction of its mean total density.
pub fn density_floor(psi_c: ArrayView2<Complex64>, psi_x: ArrayView2<Complex64>) -> f64 {
    let n = psi_c.len().max(1) as f64;
    let mean = psi_c.iter().chain(psi_x.iter()).map(|z| z.norm_sqr()).sum::<f64>() / n;
    DENSITY_FLOOR_REL * mean
}

/// Spectral `|∇ψ|²` on the whole periodic grid.
pub fn gradient_density(fft: &mut Fft2, grid: &Grid2D, psi: &Array2<Complex64>) -> Array2<f64> {
    let mut spec = psi.as_standard_layout().into_owned();
    fft.forward(&mut spec);
    let k = grid.k_axis();
    let mut dx = spec.clone();
    let mut dy = spec;
    for ((_, ix), v) in dx.indexed_iter_mut() {
        *v *= Complex64::new(0.0, k[ix]);
    }
    for ((iy, _), v) in dy.indexed_iter_mut() {
        *v *= Complex64::new(0.0, k[iy]);
    }
    fft.inverse(&mut dx);
    fft.inverse(&mut dy);
    Zip::from(&dx).and(&dy).map_collect(|a, b| a.norm_sqr() + b.norm_sqr())
}

fn kinetic_from_gradient(
    grad2: ArrayView2<f64>,
    psi_c: ArrayView2<Complex64>,
    psi_x: ArrayView2<Complex64>,
) -> Result<f64, ObservablesError> {
    let floor = density_floor(psi_c, psi_x);
    let fr = fractions_of(psi_c, psi_x, floor);
    let num: f64 = Zip::from(&fr.f_c).and(grad2).fold(0.0, |acc, f, g| acc + f * g);
    let den: f64 = psi_c.iter().map(|z| z.norm_sqr()).sum();
    if den <= 0.0 || !den.is_finite() {
        return Err(ObservablesError::ZeroNorm);
    }
    Ok(num / den)
}

/// Kinetic energy per polariton `∫_S f_C |∇ψ_C|² / ∫_S |ψ_C|²`.
pub fn kinetic_energy(fields: &FieldPair, roi: &Roi) -> Result<f64, ObservablesError> {
    let w = roi.resolve(&fields.grid)?;
    let mut fft = Fft2::new(fields.grid.n);
    let grad2 = gradient_density(&mut fft, &fields.grid, &fields.psi_c);
    kinetic_from_gradient(w.view(&grad2), w.view(&fields.psi_c), w.view(&fields.psi_x))
}

fn interaction_in(psi_c: ArrayView2<Complex64>, psi_x: ArrayView2<Complex64>) -> f64 {
    let floor = density_floor(psi_c, psi_x);
    let fr = fractions_of(psi_c, psi_x, floor);
    let sum: f64 = Zip::from(&fr.f_x).and(psi_x).fold(0.0, |acc, f, x| acc + f * x.norm_sqr());
    sum / psi_x.len().max(1) as f64
}

/// Interaction energy per polariton `⟨f_X |ψ_X|²⟩` over the ROI.
pub fn interaction_energy(fields: &FieldPair, roi: &Roi) -> Result<f64, ObservablesError> {
    let w = roi.resolve(&fields.grid)?;
    Ok(interaction_in(w.view(&fields.psi_c), w.view(&fields.psi_x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vortex {
    pub x: f64,
    pub y: f64,
    pub charge: i32,
}

/// Phase defects of `ψ_C` in the ROI from the winding around each plaquette
/// whose four corners exceed the density floor.
pub fn detect_vortices(fields: &FieldPair, roi: &Roi, floor_rel: f64) -> Result<Vec<Vortex>, ObservablesError> {
    let w = roi.resolve(&fields.grid)?;
    Ok(vortices_in_window(&fields.grid, &w, &fields.psi_c, floor_rel))
}

pub(crate) fn vortices_in_window(grid: &Grid2D, w: &RoiWindow, psi: &Array2<Complex64>, floor_rel: f64) -> Vec<Vortex> {
    let view = w.view(psi);
    let mean = view.iter().map(|z| z.norm_sqr()).sum::<f64>() / view.len().max(1) as f64;
    let floor = floor_rel * mean;
    let dx = grid.dx();
    let mut out = Vec::new();
    for iy in 0..w.rows.saturating_sub(1) {
        for ix in 0..w.cols.saturating_sub(1) {
            let corners = [view[[iy, ix]], view[[iy, ix + 1]], view[[iy + 1, ix + 1]], view[[iy + 1, ix]]];
            if corners.iter().any(|z| z.norm_sqr() <= floor) {
                continue;
            }
            let charge = plaquette_winding(&corners);
            if charge != 0 {
                out.push(Vortex {
                    x: grid.x(w.x0 + ix) + 0.5 * dx,
                    y: grid.x(w.y0 + iy) + 0.5 * dx,
                    charge,
                });
            }
        }
    }
    out
}

/// Net winding number of the closed corner loop, in units of 2π.
pub fn plaquette_winding(loop_values: &[Complex64]) -> i32 {
    let n = loop_values.len();
    let total: f64 = (0..n)
        .map(|i| (loop_values[(i + 1) % n] * loop_values[i].conj()).arg())
        .sum();
    (total / (2.0 * PI)).round() as i32
}

/// Normalised momentum distribution of a real density patch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentumSpectrum {
    /// |DFT| of the mean-removed density, unit peak, FFT order `[ky][kx]`.
    #[serde(skip)]
    pub spectrum: Array2<f64>,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    /// Azimuthal average, sampled at multiples of `radial_dk`.
    pub radial: Vec<f64>,
    pub radial_dk: f64,
    /// |k| of the strongest density Fourier component.
    pub k_peak: f64,
    /// `k_peak / 2`: field wavevector of a standing wave with that density.
    pub k_field: f64,
}

/// Spectrum of `density` sampled with spacing `dx`, zero-padded by `pad`.
pub fn density_spectrum(density: ArrayView2<f64>, dx: f64, pad: usize) -> MomentumSpectrum {
    let (rows, cols) = density.dim();
    let pad = pad.max(1);
    let (pr, pc) = (rows * pad, cols * pad);
    let mean = density.mean().unwrap_or(0.0);
    let mut buf = Array2::<Complex64>::zeros((pr, pc));
    for ((iy, ix), v) in density.indexed_iter() {
        buf[[iy, ix]] = Complex64::new(v - mean, 0.0);
    }
    fft2_rect(&mut buf);
    let mut spectrum = buf.mapv(|z| z.norm());
    let kx = fft_axis(pc, dx);
    let ky = fft_axis(pr, dx);
    let (mut best, mut peak) = (0.0, (0usize, 0usize));
    for ((iy, ix), &v) in spectrum.indexed_iter() {
        if v > best {
            best = v;
            peak = (iy, ix);
        }
    }
    if best > 0.0 {
        spectrum /= best;
    }
    let k_peak = if best > 1e-300 { kx[peak.1].hypot(ky[peak.0]) } else { 0.0 };

    let radial_dk = 2.0 * PI / (dx * pc.max(pr) as f64);
    let k_lim = kx.iter().chain(ky.iter()).fold(0.0f64, |a, k| a.max(k.abs()));
    let bins = (k_lim / radial_dk).ceil() as usize + 1;
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for ((iy, ix), &v) in spectrum.indexed_iter() {
        let b = (kx[ix].hypot(ky[iy]) / radial_dk).round() as usize;
        if b < bins {
            sum[b] += v;
            count[b] += 1;
        }
    }
    let radial = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    MomentumSpectrum {
        spectrum,
        kx,
        ky,
        radial,
        radial_dk,
        k_peak,
        k_field: 0.5 * k_peak,
    }
}

/// Default zero-padding applied to ROI spectra.
pub const SPECTRUM_PAD: usize = 4;

/// Spectrum of the ROI photon density of one snapshot.
pub fn momentum_spectrum(fields: &FieldPair, roi: &Roi) -> Result<MomentumSpectrum, ObservablesError> {
    let w = roi.resolve(&fields.grid)?;
    let density = w.view(&fields.psi_c).mapv(|z| z.norm_sqr());
    Ok(density_spectrum(density.view(), fields.grid.dx(), SPECTRUM_PAD))
}

fn fft_axis(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * dx);
    (0..n)
        .map(|i| {
            let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            m * dk
        })
        .collect()
}

/// Unnormalised 2D FFT of an arbitrary rectangular array.
fn fft2_rect(a: &mut Array2<Complex64>) {
    let (rows, cols) = a.dim();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(cols);
    let col_fft = planner.plan_fft_forward(rows);
    {
        let data = a.as_slice_mut().expect("standard layout");
        row_fft.process(data);
    }
    let mut t = a.t().as_standard_layout().into_owned();
    col_fft.process(t.as_slice_mut().expect("standard layout"));
    a.assign(&t.t());
}

/// One time-tagged ROI sample of the photon field.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    pub t: f64,
    pub psi_c: Array2<Complex64>,
}

#[derive(Debug, Clone)]
pub struct CoherenceResult {
    /// Per-pixel g1; NaN where the temporal second moment vanishes.
    pub map: Array2<f64>,
    pub scalar: f64,
    pub flagged: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
}

pub const MIN_COHERENCE_SAMPLES: usize = 10;

/// Samples in the half-open window `(t_last − window, t_last]`.
pub fn window_samples(samples: &[RoiSample], window: f64) -> &[RoiSample] {
    let Some(last) = samples.last() else {
        return samples;
    };
    let start = last.t - window + 1e-9 * window.abs().max(1.0);
    let first = samples.iter().position(|s| s.t > start).unwrap_or(samples.len());
    &samples[first..]
}

/// Time-averaged first-order coherence `|⟨ψ⟩_t| / sqrt(⟨|ψ|²⟩_t)` per pixel,
/// over the last `window` of the series.
pub fn g1(samples: &[RoiSample], window: f64) -> Result<CoherenceResult, ObservablesError> {
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        let span = last.t - first.t;
        if span < window - 1e-9 * window.abs().max(1.0) {
            return Err(ObservablesError::WindowTooLong { window, span });
        }
    }
    let sel = window_samples(samples, window);
    if sel.len() < MIN_COHERENCE_SAMPLES {
        return Err(ObservablesError::TooFewSamples {
            need: MIN_COHERENCE_SAMPLES,
            got: sel.len(),
        });
    }
    let spacing = sel[1].t - sel[0].t;
    for w in sel.windows(2) {
        if ((w[1].t - w[0].t) - spacing).abs() > 1e-6 * spacing.abs().max(1e-12) {
            return Err(ObservablesError::UnevenSamples);
        }
    }
    let dim = sel[0].psi_c.dim();
    if sel.iter().any(|s| s.psi_c.dim() != dim) {
        return Err(ObservablesError::ShapeMismatch);
    }
    let mut first = Array2::<Complex64>::zeros(dim);
    let mut second = Array2::<f64>::zeros(dim);
    for s in sel {
        Zip::from(&mut first).and(&mut second).and(&s.psi_c).for_each(|a, b, z| {
            *a += z;
            *b += z.norm_sqr();
        });
    }
    let n = sel.len() as f64;
    let map = Zip::from(&first).and(&second).map_collect(|a, &b| {
        if b > 0.0 {
            ((a / n).norm() / (b / n).sqrt()).min(1.0)
        } else {
            f64::NAN
        }
    });
    let valid: Vec<f64> = map.iter().copied().filter(|v| v.is_finite()).collect();
    let flagged = map.len() - valid.len();
    let scalar = if valid.is_empty() {
        f64::NAN
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    Ok(CoherenceResult {
        map,
        scalar,
        flagged,
        t_start: sel[0].t,
        t_end: sel[sel.len() - 1].t,
        samples: sel.len(),
    })
}

/// Diagnostics of one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub t: f64,
    /// ROI-mean photon density.
    pub n_c: f64,
    pub f_c: f64,
    pub f_x: f64,
    pub e_kin: Option<f64>,
    pub e_int: f64,
    pub eta_t: Option<f64>,
    pub k_peak: f64,
    pub vortex_count: usize,
    /// Defect positions; empty when the record was read back from CSV.
    #[serde(default)]
    pub vortices: Vec<Vortex>,
}

/// Snapshot analyser bound to one grid and ROI; keeps its FFT plan.
pub struct Analyzer {
    grid: Grid2D,
    window: RoiWindow,
    fft: Fft2,
}

impl Analyzer {
    pub fn new(grid: &Grid2D, roi: &Roi) -> Result<Self, ObservablesError> {
        Ok(Self {
            grid: *grid,
            window: roi.resolve(grid)?,
            fft: Fft2::new(grid.n),
        })
    }

    pub fn window(&self) -> &RoiWindow {
        &self.window
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn observe(&mut self, fields: &FieldPair) -> ObservableRecord {
        let w = self.window;
        let c = w.view(&fields.psi_c);
        let x = w.view(&fields.psi_x);
        let floor = density_floor(c, x);
        let fr = fractions_of(c, x, floor);
        let cells = w.len().max(1) as f64;
        let grad2 = gradient_density(&mut self.fft, &self.grid, &fields.psi_c);
        let e_kin = kinetic_from_gradient(w.view(&grad2), c, x).ok();
        let e_int = interaction_in(c, x);
        let eta_t = e_kin.filter(|&k| k > 0.0).map(|k| e_int / k);
        let density = c.mapv(|z| z.norm_sqr());
        let spectrum = density_spectrum(density.view(), self.grid.dx(), SPECTRUM_PAD);
        let vortices = vortices_in_window(&self.grid, &w, &fields.psi_c, DENSITY_FLOOR_REL);
        ObservableRecord {
            t: fields.t,
            n_c: density.sum() / cells,
            f_c: fr.f_c.sum() / cells,
            f_x: fr.f_x.sum() / cells,
            e_kin,
            e_int,
            eta_t,
            k_peak: spectrum.k_peak,
            vortex_count: vortices.len(),
            vortices,
        }
    }

    pub fn roi_sample(&self, fields: &FieldPair) -> RoiSample {
        RoiSample {
            t: fields.t,
            psi_c: self.window.view(&fields.psi_c).to_owned(),
        }
    }
}

/// Time average and standard deviation of `η̃` over the trailing `window`.
pub fn eta_time_average(records: &[ObservableRecord], window: f64) -> Result<(f64, f64), ObservablesError> {
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Err(ObservablesError::WindowTooLong { window, span: 0.0 });
    };
    let span = last.t - first.t;
    if window > span + 1e-9 * window.abs().max(1.0) {
        return Err(ObservablesError::WindowTooLong { window, span });
    }
    let start = last.t - window + 1e-9 * window.abs().max(1.0);
    let values = records
        .iter()
        .filter(|r| r.t > start || window == 0.0 && r.t == last.t)
        .map(|r| r.eta_t.ok_or(ObservablesError::MissingRatio(r.t)))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(ObservablesError::TooFewSamples { need: 1, got: 0 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Relative squared deviation `Σ|ψ − ψ_ref|² / Σ|ψ_ref|²` of the photon field
/// over a centred square of side `window`, matching points by coordinate.
pub fn convergence_error(
    candidate: &FieldPair,
    reference: &FieldPair,
    window: f64,
    dt: f64,
) -> Result<f64, ObservablesError> {
    if (candidate.t - reference.t).abs() > 0.5 * dt {
        return Err(ObservablesError::TimeMismatch {
            candidate: candidate.t,
            reference: reference.t,
        });
    }
    let (gc, gr) = (candidate.grid, reference.grid);
    let w = Roi::centered(window).resolve(&gc)?;
    let map = |i: usize| -> Result<usize, ObservablesError> {
        let pos = (gc.x(i) + 0.5 * gr.length) / gr.dx();
        let idx = pos.round();
        if (pos - idx).abs() > 1e-6 || idx < 0.0 || idx >= gr.n as f64 {
            return Err(ObservablesError::NotCoRegistered(format!(
                "x = {} has no reference sample",
                gc.x(i)
            )));
        }
        Ok(idx as usize)
    };
    let (mut num, mut den) = (0.0, 0.0);
    for iy in w.y0..w.y0 + w.rows {
        let ry = map(iy)?;
        for ix in w.x0..w.x0 + w.cols {
            let rx = map(ix)?;
            let r = reference.psi_c[[ry, rx]];
            num += (candidate.psi_c[[iy, ix]] - r).norm_sqr();
            den += r.norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(ObservablesError::ZeroNorm);
    }
    Ok(num / den)
}
